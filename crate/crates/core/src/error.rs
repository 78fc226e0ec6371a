//! Shared error type for the core library.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },

    #[error("{what} guard exceeded: needs {needed}, limit {limit} ({hint})")]
    GuardExceeded {
        what: &'static str,
        needed: usize,
        limit: usize,
        hint: &'static str,
    },

    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Numeric aborts map to a dedicated process exit code in the CLI.
    pub fn is_numeric_abort(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
