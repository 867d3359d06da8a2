use std::path::PathBuf;

use crate::clients::ClientError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Transport,
    Validation,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Client(#[from] ClientError),

    #[error("checkpoint {path} cannot be resumed ({reason}); rerun with an explicit reset")]
    ResetRequired { path: PathBuf, reason: String },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Client(e) if e.is_endpoint_failure() => ErrorKind::Transport,
            Error::Client(_) => ErrorKind::Validation,
            Error::Io { .. } | Error::Internal(_) => ErrorKind::Internal,
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::InvalidInput(_)
            | Error::ResetRequired { .. } => ErrorKind::Validation,
        }
    }
}
