use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument failed validation. Names the offending field.
    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },

    /// A file could not be parsed. Line numbers are 1-based.
    #[error("parse error in {path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    /// Two rasters or matrices had incompatible shapes.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Geometry with no solution (e.g. an unreachable arm target).
    #[error("unreachable: {0}")]
    Unreachable(String),

    /// Not enough data to produce a result.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
