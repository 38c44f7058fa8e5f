//! Discrete-time simulation of linear Hawkes networks, the three benchmark
//! connectivity structures, and per-unit permutation nulls.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HawkesModel, KernelSpec, SpikeData, DesignState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureKind {
    /// `β_{i,i−1}` nonzero for consecutive units.
    Chain,
    /// Disjoint blocks of mutually connected units.
    Block,
    /// Independent Bernoulli edges.
    Random,
}

impl StructureKind {
    pub fn name(&self) -> &'static str {
        match self {
            StructureKind::Chain => "chain",
            StructureKind::Block => "block",
            StructureKind::Random => "random",
        }
    }
}

fn default_block_size() -> usize {
    2
}
fn default_density() -> f64 {
    0.02
}
fn default_beta_scale() -> f64 {
    0.3
}
fn default_mu_scale() -> f64 {
    0.2
}
fn default_decay_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureSpec {
    pub kind: StructureKind,
    pub p: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default = "default_mu_scale")]
    pub mu_scale: f64,
    #[serde(default)]
    pub seed: u64,
    /// Random structure only: allow diagonal entries.
    #[serde(default)]
    pub self_edges: bool,
    #[serde(default = "default_decay_rate")]
    pub decay_rate: f64,
}

impl StructureSpec {
    pub fn new(kind: StructureKind, p: usize) -> Self {
        Self {
            kind,
            p,
            block_size: default_block_size(),
            density: default_density(),
            beta_scale: default_beta_scale(),
            mu_scale: default_mu_scale(),
            seed: 0,
            self_edges: false,
            decay_rate: default_decay_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::InvalidParameter("structure needs p >= 1".into()));
        }
        match self.kind {
            StructureKind::Block => {
                if self.block_size == 0 || self.p % self.block_size != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "p = {} is not divisible by block_size = {}",
                        self.p, self.block_size
                    )));
                }
            }
            StructureKind::Random => {
                if !(self.density > 0.0 && self.density < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "density {} outside (0, 1)",
                        self.density
                    )));
                }
                let pairs = if self.self_edges {
                    self.p * self.p
                } else {
                    self.p * (self.p - 1)
                };
                if self.density * (pairs as f64) < 1.0 {
                    return Err(Error::InvalidParameter(
                        "random structure expects fewer than one edge".into(),
                    ));
                }
            }
            StructureKind::Chain => {}
        }
        if !self.beta_scale.is_finite() {
            return Err(Error::InvalidParameter("beta_scale must be finite".into()));
        }
        Ok(())
    }
}

fn default_clip_bounds() -> (f64, f64) {
    (0.001, 0.999)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default = "default_clip_bounds")]
    pub clip_bounds: (f64, f64),
}

impl SimConfig {
    pub fn new(steps: usize, seed: u64) -> Self {
        Self {
            steps,
            burn_in: 500,
            seed,
            clip_bounds: default_clip_bounds(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.clip_bounds;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "clip bounds ({lo}, {hi}) must satisfy 0 < lo < hi < 1"
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("simulation needs T >= 1".into()));
        }
        Ok(())
    }
}

pub fn make_structure(spec: &StructureSpec) -> Result<HawkesModel> {
    spec.validate()?;
    let p = spec.p;
    let mut theta = Array2::<f64>::zeros((p, p));
    match spec.kind {
        StructureKind::Chain => {
            for i in 1..p {
                theta[[i, i - 1]] = spec.beta_scale;
            }
        }
        StructureKind::Block => {
            for start in (0..p).step_by(spec.block_size) {
                for i in start..start + spec.block_size {
                    for j in start..start + spec.block_size {
                        if i != j {
                            theta[[i, j]] = spec.beta_scale;
                        }
                    }
                }
            }
        }
        StructureKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            for i in 0..p {
                for j in 0..p {
                    if i == j && !spec.self_edges {
                        continue;
                    }
                    if rng.random::<f64>() < spec.density {
                        theta[[i, j]] = spec.beta_scale;
                    }
                }
            }
        }
    }
    HawkesModel::new(
        Array1::from_elem(p, spec.mu_scale),
        theta,
        KernelSpec::exponential(spec.decay_rate),
    )
}

/// Bernoulli thinning on the unit grid.
///
/// At each step the intensity `μ + Θ x(t)` is clamped into `clip_bounds`
/// and every unit draws independently. The first `burn_in` steps are
/// discarded; `clip_count` counts clamped evaluations among the recorded steps.
pub fn simulate(model: &HawkesModel, cfg: &SimConfig) -> Result<(SpikeData, DesignState)> {
    model.validate()?;
    cfg.validate()?;
    let p = model.units();
    let (lo, hi) = cfg.clip_bounds;
    let decay = model.kernel.step_decay();
    let total = cfg.burn_in + cfg.steps;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut events = Array2::<u8>::zeros((cfg.steps, p));
    let mut xs = Array2::<f64>::zeros((cfg.steps, p));
    let mut lambdas = Array2::<f64>::zeros((cfg.steps, p));
    let mut sigma2 = Array2::<f64>::zeros((cfg.steps, p));
    let mut clip_count = 0usize;

    let mut x = Array1::<f64>::zeros(p);
    let mut y = vec![0u8; p];
    for t in 0..total {
        let recording = t >= cfg.burn_in;
        let row = t.wrapping_sub(cfg.burn_in);
        for i in 0..p {
            let mut lam = model.mu[i];
            for j in 0..p {
                let b = model.theta[[i, j]];
                if b != 0.0 {
                    lam += b * x[j];
                }
            }
            let prob = lam.clamp(lo, hi);
            y[i] = u8::from(rng.random::<f64>() < prob);
            if recording {
                if lam < lo || lam > hi {
                    clip_count += 1;
                }
                lambdas[[row, i]] = lam;
                sigma2[[row, i]] = prob * (1.0 - prob);
                events[[row, i]] = y[i];
                xs[[row, i]] = x[i];
            }
        }
        for j in 0..p {
            x[j] = decay * (x[j] + f64::from(y[j]));
        }
    }

    let spikes = SpikeData::new(events)?;
    Ok((
        spikes,
        DesignState {
            x: xs,
            lambda: lambdas,
            sigma2,
            clip_count,
        },
    ))
}

/// Shuffle the time order of every unit's train independently.
pub fn permute_trains(spikes: &SpikeData, seed: u64) -> SpikeData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = spikes.events().clone();
    for mut col in events.columns_mut() {
        let mut v: Vec<u8> = col.to_vec();
        v.shuffle(&mut rng);
        for (dst, src) in col.iter_mut().zip(v) {
            *dst = src;
        }
    }
    let mut out = SpikeData::new(events).expect("permutation keeps a valid matrix");
    out.origin_label = spikes.origin_label.clone();
    out
}
