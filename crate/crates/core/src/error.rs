use std::path::PathBuf;

/// Errors raised across the detection stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An API was called out of order (e.g. backward without a matching forward).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity surfaced where a finite value is required.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A configuration value violates its type invariant.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A persisted file is malformed.
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
