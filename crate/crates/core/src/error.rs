use std::io;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its valid domain.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input line could not be parsed.
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A label is not known to the model.
    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    /// A fixed-capacity model ran out of label slots.
    #[error("capacity exceeded: {capacity} label slots are all taken, cannot add `{label}`")]
    Capacity { capacity: usize, label: String },

    /// An operation was called with arguments violating its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A model file is malformed or of the wrong kind.
    #[error("model format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
