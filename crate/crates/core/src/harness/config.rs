use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::experiment::{EdgeSubset, TestSettings};
use crate::inference::InferenceConfig;
use crate::model::DEFAULT_SIGMA_FLOOR;
use crate::simulator::{SimConfig, StructureSpec};
use crate::solver::SeqCVSpec;

fn default_alpha() -> f64 {
    0.05
}
fn default_sigma_floor() -> f64 {
    DEFAULT_SIGMA_FLOOR
}
fn default_burn_in() -> usize {
    500
}
fn default_clip_bounds() -> (f64, f64) {
    (0.001, 0.999)
}

/// Experiment description, read from a TOML document whose keys are the
/// field names below.
///
/// ```toml
/// T_list = [200, 1000, 2000]
/// n_replicates = 200
/// alpha = 0.05
/// seed = 7
/// oracle = true
/// edge_subset = { true_edges_plus_sample = 50 }
///
/// [structure]
/// kind = "chain"
/// p = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub structure: StructureSpec,
    #[serde(rename = "T_list")]
    pub t_list: Vec<usize>,
    pub n_replicates: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub cv: SeqCVSpec,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub edge_subset: EdgeSubset,
    #[serde(default)]
    pub oracle: bool,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_clip_bounds")]
    pub clip_bounds: (f64, f64),
    /// Record wall-clock timings in `mean_runtime_ms`. Off by default so
    /// outputs stay byte-reproducible.
    #[serde(default)]
    pub record_runtime: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.structure.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::InvalidParameter("n_replicates must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.t_list.is_empty() {
            return Err(Error::InvalidParameter("T_list must be nonempty".into()));
        }
        if self.t_list.windows(2).any(|w| w[0] >= w[1]) || self.t_list[0] == 0 {
            return Err(Error::InvalidParameter("T_list must be positive and strictly ascending".into()));
        }
        self.inference().validate()?;
        self.sim_config(self.t_list[0], 0).validate()
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            cv: self.cv.clone(),
            sigma_floor: self.sigma_floor,
            ..InferenceConfig::default()
        }
    }

    pub fn sim_config(&self, steps: usize, seed: u64) -> SimConfig {
        SimConfig {
            steps,
            burn_in: self.burn_in,
            seed,
            clip_bounds: self.clip_bounds,
        }
    }

    pub fn test_settings(&self) -> TestSettings {
        TestSettings {
            alpha: self.alpha,
            inference: self.inference(),
            edge_subset: self.edge_subset,
            oracle: self.oracle,
            burn_in: self.burn_in,
            clip_bounds: self.clip_bounds,
            record_runtime: self.record_runtime,
        }
    }
}
