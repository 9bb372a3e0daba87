//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PtalError {
    /// Shape of an input does not match what a layer or operation expects.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid configuration (counts, ranges, packing feasibility).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Missing or inconsistent annotations.
    #[error("annotation error: {0}")]
    Annotation(String),

    /// Training diverged or failed to reach its contract.
    #[error("training error: {0}")]
    Training(String),

    /// Non-finite values where finite numbers are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed artifact file (bad magic, truncated, size mismatch).
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl PtalError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        PtalError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        PtalError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, PtalError>;
