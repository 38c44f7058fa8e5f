use thiserror::Error;

/// Errors raised across the crate.
///
/// Variants group into input problems, assumption failures and numerical
/// degeneracies; [`Error::exit_code`] maps each group to the CLI exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cross-validation fold is empty: {0}")]
    EmptyFold(String),

    #[error("Assumption 1 violated: spectral norm of Omega is {gamma:.4} (must be < 1)")]
    Stationarity { gamma: f64 },

    #[error("Assumption 2 violated: max row sum of Omega is {rho_r:.4} (must be < 1)")]
    FlowBound { rho_r: f64 },

    #[error("singular score covariance: {0}")]
    SingularUpsilon(String),

    #[error("singular one-step curvature: {0}")]
    SingularUpsilonTilde(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// CLI exit code: 2 input error, 3 assumption failure, 4 numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stationarity { .. } | Error::FlowBound { .. } => 3,
            Error::SingularUpsilon(_)
            | Error::SingularUpsilonTilde(_)
            | Error::DegenerateDesign(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
