use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
///
/// `Domain` covers invalid inputs and data problems, `Internal` covers broken
/// numerical invariants (a non-monotone objective, NaN statistics). The CLI
/// maps the two families onto different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),

    #[error("internal invariant violated: {0}")]
    Internal(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
