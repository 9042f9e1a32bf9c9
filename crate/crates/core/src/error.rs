use std::path::PathBuf;

/// Errors produced by the estimation, simulation and experiment routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported schedule: {0}")]
    UnsupportedSchedule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("all-zero solution: the data carry no non-negative signal")]
    EmptySolution,

    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        /// Best iterate reached before giving up.
        best: Vec<f64>,
    },

    #[error("degenerate decomposition: {reason}")]
    DegenerateDecomposition {
        reason: String,
        /// Single-Gaussian fit `(mean_ms, std_ms, weight)` of the whole distribution.
        single: (f64, f64, f64),
    },

    #[error("R^2 is undefined for a constant signal")]
    UndefinedR2,

    #[error("all {0} bootstrap members failed to converge")]
    AggregateFailure(usize),

    #[error("missing model for method `{0}`")]
    MissingModel(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

pub(crate) fn dim(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
