//! Linear Hawkes network: parameters, kernel, integrated history and the
//! stationarity diagnostics.
//!
//! Time is a unit-spaced grid `t = 0..T` (0-based in code). Unit `j`'s
//! integrated process is the kernel-weighted count of its strictly earlier
//! events,
//!
//! ```text
//! x_j(t) = Σ_{s<t} κ(t − s) Y_j(s),    κ(u) = e^{−b u}
//! ```
//!
//! and the intensity of unit `i` is the linear predictor `μ_i + Σ_j β_ij x_j(t)`.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default lower bound on σ² used when turning intensities into residual scales.
pub const DEFAULT_SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Exponential,
}

/// Transition kernel `κ(u) = e^{−b u}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub decay_rate: f64,
    /// History weight below which non-recursive evaluations stop summing.
    pub truncation_tol: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::exponential(1.0)
    }
}

impl KernelSpec {
    pub fn exponential(decay_rate: f64) -> Self {
        Self {
            family: KernelFamily::Exponential,
            decay_rate,
            truncation_tol: 1e-16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_rate > 0.0 && self.decay_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kernel decay rate must be positive, got {}",
                self.decay_rate
            )));
        }
        if !(self.truncation_tol > 0.0) {
            return Err(Error::InvalidParameter(
                "kernel truncation_tol must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn value(&self, lag: f64) -> f64 {
        match self.family {
            KernelFamily::Exponential => (-self.decay_rate * lag).exp(),
        }
    }

    /// `∫₀^∞ κ(u) du`.
    pub fn integral(&self) -> f64 {
        match self.family {
            KernelFamily::Exponential => 1.0 / self.decay_rate,
        }
    }

    /// One-step decay factor of the recursion `x(t+1) = r (x(t) + Y(t))`.
    pub fn step_decay(&self) -> f64 {
        self.value(1.0)
    }
}

/// Parameters of a `p`-unit linear Hawkes network.
///
/// `theta[[i, j]]` is the effect of unit `j`'s past events on unit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HawkesModel {
    pub mu: Array1<f64>,
    pub theta: Array2<f64>,
    pub kernel: KernelSpec,
}

impl HawkesModel {
    pub fn new(mu: Array1<f64>, theta: Array2<f64>, kernel: KernelSpec) -> Result<Self> {
        let model = Self { mu, theta, kernel };
        model.validate()?;
        Ok(model)
    }

    /// Independent units with a common background rate.
    pub fn null(p: usize, mu: f64) -> Result<Self> {
        Self::new(
            Array1::from_elem(p, mu),
            Array2::zeros((p, p)),
            KernelSpec::default(),
        )
    }

    pub fn units(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.mu.len();
        if p == 0 {
            return Err(Error::InvalidParameter("model needs at least one unit".into()));
        }
        if self.theta.dim() != (p, p) {
            return Err(Error::Dimension(format!(
                "theta is {:?}, expected ({p}, {p})",
                self.theta.dim()
            )));
        }
        if let Some(m) = self.mu.iter().find(|m| !(**m > 0.0 && **m < 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "background intensity {m} outside (0, 1)"
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("theta has non-finite entries".into()));
        }
        self.kernel.validate()
    }

    /// Nonzero pattern of theta.
    pub fn support(&self) -> Array2<bool> {
        self.theta.mapv(|v| v != 0.0)
    }

    /// Column indices of the nonzero entries in row `i`.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        self.theta
            .row(i)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Binary event matrix on the unit grid, `events[[t, i]] ∈ {0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeData {
    events: Array2<u8>,
    pub origin_label: Option<String>,
}

impl SpikeData {
    pub fn new(events: Array2<u8>) -> Result<Self> {
        if events.nrows() == 0 {
            return Err(Error::InvalidParameter("spike data needs T >= 1".into()));
        }
        if events.ncols() == 0 {
            return Err(Error::InvalidParameter("spike data needs p >= 1".into()));
        }
        if events.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParameter("spike entries must be 0 or 1".into()));
        }
        Ok(Self {
            events,
            origin_label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.origin_label = Some(label.into());
        self
    }

    pub fn steps(&self) -> usize {
        self.events.nrows()
    }

    pub fn units(&self) -> usize {
        self.events.ncols()
    }

    pub fn events(&self) -> &Array2<u8> {
        &self.events
    }

    /// Column `i` as floating point responses.
    pub fn response(&self, i: usize) -> Array1<f64> {
        self.events.column(i).mapv(f64::from)
    }

    pub fn column_counts(&self) -> Vec<usize> {
        self.events
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|&v| v as usize).sum())
            .collect()
    }
}

/// Simulated history: integrated processes, intensities and conditional variances.
///
/// When produced by the simulator after a burn-in, `x` carries the burn-in
/// history and its first row is generally nonzero; `integrated_process` on
/// the recorded spikes restarts from an empty history.
#[derive(Debug, Clone)]
pub struct DesignState {
    pub x: Array2<f64>,
    pub lambda: Array2<f64>,
    pub sigma2: Array2<f64>,
    pub clip_count: usize,
}

/// Integrated history `x_j(t)` by the exact exponential recursion.
pub fn integrated_process(spikes: &SpikeData, kernel: &KernelSpec) -> Array2<f64> {
    let (steps, p) = spikes.events.dim();
    let r = kernel.step_decay();
    let mut x = Array2::<f64>::zeros((steps, p));
    for t in 1..steps {
        for j in 0..p {
            x[[t, j]] = r * (x[[t - 1, j]] + f64::from(spikes.events[[t - 1, j]]));
        }
    }
    x
}

/// Raw linear predictor `μ + Θ x`. No clipping.
pub fn intensity(model: &HawkesModel, x_row: ArrayView1<f64>) -> Array1<f64> {
    &model.mu + &model.theta.dot(&x_row)
}

/// Bernoulli variance `λ(1 − λ)` of the clamped intensity, bounded below by `floor`.
pub fn residual_scale(lambda_val: f64, floor: f64) -> f64 {
    let l = lambda_val.clamp(0.0, 1.0);
    (l * (1.0 - l)).max(floor)
}

/// Stationarity and boundedness diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    /// `Ω_ij = ∫₀^∞ |β_ij κ(u)| du`.
    pub omega: Array2<f64>,
    /// Largest singular value of Ω.
    pub gamma_omega: f64,
    /// Max row sum of Ω (in-flow).
    pub rho_r: f64,
    /// Max column sum of Ω (out-flow).
    pub rho_c: f64,
    /// Observed range of the linear predictor over the probe data.
    pub intensity_bounds: Option<(f64, f64)>,
    /// One flag per assumption: spectral stationarity, flow bounds,
    /// intensity strictly inside (0, 1), kernel positive and integrable.
    pub pass_flags: [bool; 4],
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.pass_flags.iter().all(|&f| f)
    }

    /// First hard failure, if any. The stationarity condition is checked first.
    pub fn hard_failure(&self) -> Option<Error> {
        if !self.pass_flags[0] {
            Some(Error::Stationarity {
                gamma: self.gamma_omega,
            })
        } else if !self.pass_flags[1] {
            Some(Error::FlowBound { rho_r: self.rho_r })
        } else {
            None
        }
    }
}

pub fn check_assumptions(model: &HawkesModel, probe: Option<&SpikeData>) -> Result<AssumptionReport> {
    model.validate()?;
    let omega = model.theta.mapv(|b| b.abs() * model.kernel.integral());
    let gram = omega.t().dot(&omega);
    let top = linalg::symmetric_eigenvalues(&gram)
        .last()
        .copied()
        .unwrap_or(0.0)
        .max(0.0);
    let gamma_omega = top.sqrt();
    let rho_r = omega
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .fold(0.0, f64::max);
    let rho_c = omega
        .columns()
        .into_iter()
        .map(|c| c.sum())
        .fold(0.0, f64::max);

    let intensity_bounds = match probe {
        Some(spikes) => {
            if spikes.units() != model.units() {
                return Err(Error::Dimension(format!(
                    "probe has {} units, model has {}",
                    spikes.units(),
                    model.units()
                )));
            }
            let x = integrated_process(spikes, &model.kernel);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for row in x.rows() {
                for v in intensity(model, row).iter() {
                    lo = lo.min(*v);
                    hi = hi.max(*v);
                }
            }
            Some((lo, hi))
        }
        None => None,
    };
    let intensity_ok = intensity_bounds.is_none_or(|(lo, hi)| lo > 0.0 && hi < 1.0);
    let kernel_ok = model.kernel.validate().is_ok() && model.kernel.integral().is_finite();

    Ok(AssumptionReport {
        omega,
        gamma_omega,
        rho_r,
        rho_c,
        intensity_bounds,
        pass_flags: [gamma_omega < 1.0, rho_r < 1.0 && rho_c.is_finite(), intensity_ok, kernel_ok],
    })
}
