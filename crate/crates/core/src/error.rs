use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{spins} spins exceeds the dense simulator limit of {max}")]
    TooManySpins { spins: usize, max: usize },

    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NonHermitian(f64),

    #[error("invalid spin system: {0}")]
    InvalidSystem(String),

    #[error("invalid pulse: {0}")]
    InvalidPulse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing probability for configuration {0}")]
    MissingConfiguration(String),

    #[error("no GRAPE pulse available for target {0}")]
    MissingPulse(String),

    #[error("no defined kappa samples")]
    NoResult,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
