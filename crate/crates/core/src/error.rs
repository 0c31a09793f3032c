use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EsilError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EsilError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {what} (segment `{segment}`, index {index})")]
    NonFinite {
        what: &'static str,
        segment: String,
        index: usize,
    },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("episode exhausted: step {step} requested but episode length is {length}")]
    EpisodeExhausted { step: usize, length: usize },

    #[error("unknown environment `{0}` (expected empty-room, point-reach or point-push)")]
    UnknownEnv(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("worker {worker} failed: {message}")]
    Worker { worker: usize, message: String },

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EsilError {
    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        EsilError::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EsilError::Io {
            path: path.into(),
            source,
        }
    }
}
