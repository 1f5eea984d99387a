use std::io;

use thiserror::Error;

/// Errors produced by the hashing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric failure in {step}: {msg}")]
    Numeric { step: &'static str, msg: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numeric(step: &'static str, msg: impl Into<String>) -> Self {
        Error::Numeric {
            step,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
