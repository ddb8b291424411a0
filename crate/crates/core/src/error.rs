//! Error type shared by every module of the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad shapes, invalid search-space definitions, out-of-range settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A config file entry that failed to parse or validate.
    #[error("config line {line}: {message}")]
    ConfigLine { line: usize, message: String },

    /// API misuse: stale caches, mismatched paths, bad argument lengths.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN or Inf appeared during training or evaluation.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Not enough recorded steps to compute a variance.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// The path space is too large to enumerate.
    #[error("refusing to enumerate {count} paths (cap {cap}); sample instead")]
    EnumerationCap { count: u128, cap: usize },

    /// The search could not produce a candidate inside the parameter budget.
    #[error("search error: {0}")]
    Search(String),

    /// Malformed binary or text input.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code: 1 usage/config, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::InsufficientSamples(_) => 2,
            Error::Io(_) | Error::Parse { .. } => 3,
            _ => 1,
        }
    }
}
