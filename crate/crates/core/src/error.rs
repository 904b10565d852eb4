//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    /// Malformed input data, reported with its 1-based line number.
    #[error("line {line}: {message}")]
    DataFormat { line: usize, message: String },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid atomic intent {0:?}")]
    InvalidIntent(String),

    #[error("at least one atomic intent required")]
    EmptyIntent,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("training data contains a single class")]
    SingleClass,

    #[error("no eligible intent")]
    NoEligibleIntent,

    #[error("reference must be non-empty")]
    EmptyReference,

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("artifact format: {0}")]
    ArtifactFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
