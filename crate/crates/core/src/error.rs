//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("dictionary is empty after filtering")]
    EmptyDictionary,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("source sentence is empty")]
    EmptySource,

    #[error("training aborted, non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("meteor tool unavailable: {0}")]
    ToolUnavailable(String),

    #[error("meteor tool output unparseable: {0}")]
    ToolOutputUnparseable(String),

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("snapshot format error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
