use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}, line {line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from the input data rather than the caller or the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format { .. } | Error::Row { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_)
        )
    }

    pub fn is_numeric_failure(&self) -> bool {
        matches!(self, Error::NonFinite(_))
    }
}
