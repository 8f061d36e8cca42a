use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Structural problem in an input set (shape mismatch, missing entries).
    #[error("schema error: {0}")]
    Schema(String),

    /// Numerical problem in input data (non-finite values and the like).
    #[error("data error: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("registration failed: {0}")]
    Registration(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("simulation error at step {step}: {reason}")]
    Simulation { step: usize, reason: String },

    #[error("config error in [{module}]: {reason}")]
    Config { module: String, reason: String },

    #[error("no manipulation detected")]
    NoManipulation,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(module: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            module: module.to_string(),
            reason: reason.into(),
        }
    }
}
