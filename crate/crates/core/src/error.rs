//! Error type shared by all modules.

use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// A caller violated an operation precondition (bad length, index, name).
    InvalidArgument(String),
    /// A file on disk does not match its documented layout.
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
    /// Shapes of vectors/matrices passed together do not agree.
    Dimension(String),
    /// A computation produced a non-finite value.
    Numeric(String),
    /// I/O failure, with the path that was being accessed.
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Format {
                path,
                offset,
                message,
            } => write!(
                f,
                "format error in {} at byte {offset}: {message}",
                path.display()
            ),
            Error::Dimension(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric failure: {msg}"),
            Error::Io { path, source } => write!(f, "i/o error on {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
