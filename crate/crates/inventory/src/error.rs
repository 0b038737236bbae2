use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, row {row}: {reason}")]
    Row { path: PathBuf, row: usize, reason: String },

    #[error("missing mandatory column(s): {}", .0.join(", "))]
    MissingColumns(Vec<String>),

    #[error("duplicate tree_id(s): {}", .0.join(", "))]
    DuplicateIds(Vec<String>),

    #[error("unknown snapshot S{0}")]
    UnknownSnapshot(u64),

    #[error("CRS mismatch: {0} vs {1}")]
    CrsMismatch(String, String),

    #[error("store is locked by another writer ({0}); remove the file if no writer is running")]
    Locked(PathBuf),

    #[error("corrupt store file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Core(#[from] canopy_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for filesystem failures, as opposed to bad input.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } | Error::Locked(_) | Error::Corrupt { .. } => true,
            Error::Core(e) => e.is_io(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
