use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the numeric core and the archive layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("offset overlap or gap: {0}")]
    OffsetOverlap(String),
    #[error("unsupported dtype {dtype:?} for tensor {name:?}")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing LM-head")]
    MissingHead,
    #[error("ragged layer schema: {0}")]
    RaggedSchema(String),
    #[error("ambiguous LM-head orientation: {0}")]
    AmbiguousOrientation(String),
    #[error("zero vector: {0}")]
    ZeroVector(String),
    #[error("vocabulary size mismatch: {0} vs {1}")]
    VocabMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
