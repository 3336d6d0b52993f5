use std::io;

use thiserror::Error;

/// Errors produced by the key-distribution toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or an inconsistent key bundle.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (dimension mismatch, index out of range, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// Malformed wire frame or text file.
    #[error("parse error: {message} (field `{field}` at byte offset {offset})")]
    Parse {
        field: &'static str,
        offset: usize,
        message: String,
    },
    /// The TV solver produced a non-finite objective.
    #[error("solver diverged at outer iteration {outer}, inner iteration {inner}: {detail}")]
    Solver {
        outer: usize,
        inner: usize,
        detail: String,
    },
    /// Socket or file I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parse(field: &'static str, offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            field,
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
