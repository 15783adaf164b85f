use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unknown requirement label `{0}`")]
    UnknownRequirement(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("sequence {sequence}: unknown requirement label `{label}`")]
    UnknownLabelInSequence { sequence: usize, label: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("division by zero: {0}")]
    ZeroDenominator(&'static str),

    #[error("no candidate paths from `{start}` with length in [{min_len}, {max_len}]; relax the length bounds or choose another start node")]
    NoCandidates {
        start: String,
        min_len: usize,
        max_len: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
