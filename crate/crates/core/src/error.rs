use thiserror::Error;

/// Errors produced while configuring, assembling, or solving a problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (must be < {limit})")]
    Index { index: usize, limit: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The factorized matrix is numerically singular. `location` is the
    /// unknown at which the detected near-null direction peaks.
    #[error(
        "singular system: near-null direction peaks at unknown {location} \
         (reciprocal condition estimate {rcond:.3e})"
    )]
    Singular { location: usize, rcond: f64 },

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
