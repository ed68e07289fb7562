//! Error type shared by every module of the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand dimensions do not chain.
    #[error("shape mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    /// A precondition on the arguments was violated.
    #[error("{0}")]
    Usage(String),

    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value in {0}")]
    Numeric(String),

    /// Invalid experiment configuration; `key` names the offending entry.
    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    /// Malformed checkpoint, telemetry or dataset file.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(ctx: impl Into<String>) -> Self {
        Error::Numeric(ctx.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
