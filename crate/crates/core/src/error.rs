//! Error type shared by every module of the crate.

use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file could not be parsed. `location` names the offending record or line.
    #[error("format error in {path} ({location}): {message}")]
    Format {
        path: PathBuf,
        location: String,
        message: String,
    },

    #[error("truncated archive {path}: header declares {expected} records, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: missing key {0:?}")]
    MissingKey(String),

    #[error("taxonomy error: {0}")]
    Taxonomy(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl AsRef<Path>,
        location: impl Into<String>,
        message: impl ToString,
    ) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            location: location.into(),
            message: message.to_string(),
        }
    }
}
