use std::io;

use thiserror::Error;

/// Errors produced across the retrieval engine.
///
/// Variants are grouped by error class; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A record is missing a field or has the wrong shape.
    #[error("schema error: {0}")]
    Schema(String),

    /// Input violates a structural invariant (empty paragraph, duplicate id, dimension mismatch, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An embedding key was not present in the embedding table.
    #[error("embedding lookup failed: no vector for key `{0}`")]
    Lookup(String),

    /// A binary file has a bad magic, version, or inconsistent header.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    /// An operation was invoked in a state that does not permit it.
    #[error("state error: {0}")]
    State(String),

    /// Distant supervision could not produce a usable label.
    #[error("label error: {0}")]
    Label(String),

    /// Optimization diverged.
    #[error("training diverged at step {step}: {detail}")]
    Training { step: usize, detail: String },
}

impl Error {
    /// True for errors caused by non-finite or diverging numerics.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Training { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
