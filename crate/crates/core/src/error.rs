use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed target {target:?}: {reason}")]
    MalformedTarget { target: String, reason: String },

    #[error("invalid label {0:?}")]
    InvalidLabel(String),

    #[error("invalid stage split: {0}")]
    InvalidSplit(String),

    #[error("no valid fused label set: {0}")]
    InfeasibleFused(String),

    #[error("token id {id} out of range for vocabulary of {size}")]
    UnknownToken { id: usize, size: usize },

    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("unknown label(s): {}", .0.join(", "))]
    UnknownLabel(Vec<String>),

    #[error("label similarity undefined: zero-norm name embedding")]
    ZeroVector,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("constrained decoding reached a dead end")]
    DeadEnd,

    #[error("evaluation over an empty set")]
    EmptyEval,

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("report keys differ across trials: {0}")]
    KeyMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

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

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
