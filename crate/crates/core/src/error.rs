use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },

    #[error("format error: {0}")]
    FormatError(String),

    #[error("truncated file: {0}")]
    TruncatedFile(String),

    #[error("value outside domain: {0}")]
    DomainError(String),

    #[error("attention weights sum to zero in channel {channel}")]
    ZeroWeight { channel: usize },

    #[error("label error: {0}")]
    LabelError(String),

    #[error("shape error: {0}")]
    ShapeError(String),

    #[error("k = {k} outside 1..={classes}")]
    InvalidK { k: usize, classes: usize },

    #[error("manifest error: {0}")]
    ManifestError(String),

    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),

    #[error("invalid perplexity {perplexity} for {rows} rows")]
    InvalidPerplexity { perplexity: f64, rows: usize },

    #[error("empty label name at position {0}")]
    EmptyName(usize),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("audio decode error: {0}")]
    Audio(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Whether the error stems from bad user input (flags, config, manifests)
    /// rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::DimMismatch { .. }
                | Error::ManifestError(_)
                | Error::UnknownMetric(_)
                | Error::InvalidK { .. }
                | Error::InvalidPerplexity { .. }
                | Error::LabelError(_)
                | Error::EmptyName(_)
        )
    }
}
