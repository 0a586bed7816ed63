use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("dialog {video_id}: missing field `{field}`")]
    MissingField { video_id: String, field: &'static str },
    #[error("dialog {video_id}: expected 10 QA pairs, found {found}")]
    QaCount { video_id: String, found: usize },
    #[error("dialog {video_id}: {field} is empty after tokenization")]
    EmptyText { video_id: String, field: String },
    #[error("feature {video_id}/{tensor}: shape mismatch, expected {expected:?}, found {found:?}")]
    ShapeMismatch { video_id: String, tensor: &'static str, expected: Vec<usize>, found: Vec<usize> },
    #[error("feature {video_id}/{tensor}: size mismatch, expected {expected} floats, file holds {found}")]
    SizeMismatch { video_id: String, tensor: &'static str, expected: usize, found: usize },
    #[error("feature {video_id}/{tensor}: non-finite value")]
    NonFinite { video_id: String, tensor: &'static str },
    #[error("unknown video_id {0}")]
    UnknownVideo(String),
    #[error("candidate pool too small: need {required} pairs, {available} available")]
    PoolTooSmall { required: usize, available: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("history already holds {0} rounds")]
    HistoryFull(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("index {index} out of range for {len} candidates")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("training diverged at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }
}
