use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the LRI library.
#[derive(Debug, Error)]
pub enum LriError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid layer, model or generator configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes that cannot be combined.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values encountered during training.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl LriError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LriError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, LriError>;
