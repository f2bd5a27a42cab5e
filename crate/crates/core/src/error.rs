use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("CFL condition requires {required} substeps per snapshot interval, limit is {limit}")]
    Cfl { required: usize, limit: usize },

    #[error("checkpoint corrupt: {0}")]
    Corrupt(String),

    #[error("schema version {found} is not supported (expected {expected}); regenerate or migrate the artifact")]
    Schema { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for failures caused by non-finite values or unstable numerics.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::Cfl { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
