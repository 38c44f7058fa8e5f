//! Simulation and inference for high-dimensional linear Hawkes networks.
//!
//! The crate covers the discrete-time linear Hawkes model with exponential
//! transition kernel ([`model`], [`simulator`]), a coordinate-descent lasso
//! with rolling-origin cross-validation ([`solver`]), de-correlated score
//! tests and one-step confidence regions for connectivity coefficients
//! ([`inference`]) backed by in-repo special functions ([`dist`]), and a
//! Monte-Carlo experiment harness with file I/O used by the `hawkes` CLI
//! ([`harness`]).
//!
//! Indices are 0-based throughout the library; the CLI and file formats
//! use 1-based unit ids.

pub mod dist;
pub mod error;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod simulator;
pub mod solver;

pub use error::{Error, Result};
pub use inference::{
    fit_nuisance, one_step_ci, oracle_score_test, score_test, ConfidenceRegion, InferenceConfig,
    NuisanceFit, ScoreTestResult,
};
pub use model::{
    check_assumptions, integrated_process, intensity, residual_scale, AssumptionReport,
    DesignState, HawkesModel, KernelSpec, SpikeData,
};
pub use simulator::{make_structure, permute_trains, simulate, SimConfig, StructureKind, StructureSpec};
pub use solver::{fit_lasso, fit_lasso_cv, sequential_cv, LassoFit, LassoProblem, SeqCVSpec};
