//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. The variants mirror
//! the failure modes of the numerical pipeline:
//!
//! - [`Error::InvalidArgument`] — a caller-supplied value violates a stated
//!   precondition (nonpositive step, out-of-range tuning exponent, …).
//! - [`Error::ModelViolation`] — a model left its declared class during a
//!   computation (diffusion hitting zero, non-integrable invariant-density
//!   tail, …).
//! - [`Error::Evaluation`] — a user-supplied function produced a non-finite
//!   value where a finite one is required.
//! - [`Error::Unsupported`] — the requested computation needs data the input
//!   does not carry (e.g. diagnostics without recorded Brownian increments).
//! - [`Error::Io`] — file persistence failures, with the offending path.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the simulation, oracle, estimation, and risk layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on a caller-supplied argument failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The model violated its declared class bounds during a computation.
    #[error("model violation: {0}")]
    ModelViolation(String),

    /// A user-supplied function returned a non-finite value.
    #[error("evaluation error: {0}")]
    Evaluation(String),

    /// The requested operation needs inputs the data does not carry.
    #[error("unsupported mode: {0}")]
    Unsupported(String),

    /// File I/O failure with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Path of the file being read or written.
        path: PathBuf,
        /// Underlying OS error.
        #[source]
        source: std::io::Error,
    },

    /// A stored path file has a malformed header or body.
    #[error("malformed path file {path}: {reason}")]
    MalformedFile {
        /// Path of the offending file.
        path: PathBuf,
        /// What was wrong with it.
        reason: String,
    },
}

impl Error {
    /// Shorthand for [`Error::InvalidArgument`] from any displayable value.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Shorthand for [`Error::Io`] tagging an OS error with its path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
