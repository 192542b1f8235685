//! Shared error type for the whole pipeline.
//!
//! Variants map 1:1 onto the failure categories the CLI reports: config
//! problems, data-format problems, numeric divergence, and coverage holes.

use thiserror::Error;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file header or structure.
    #[error("format error: {0}")]
    Format(String),

    /// A value violates a domain invariant (non-finite, out of range).
    #[error("value error: {0}")]
    Value(String),

    /// Frame ids are not strictly increasing.
    #[error("order error: {0}")]
    Order(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Dimension mismatch between inputs.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation received no usable (annotated) data.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// A class has zero training examples where a positive count is required.
    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    /// Batch statistics need at least two samples.
    #[error("batch too small: {0}")]
    BatchTooSmall(String),

    /// Two streams that must share a frame timeline do not.
    #[error("alignment error: {0}")]
    Align(String),

    /// Invalid configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Training produced a non-finite loss.
    #[error("divergence at epoch {epoch}, step {step}: {message}")]
    Divergence {
        epoch: usize,
        step: usize,
        message: String,
    },

    /// A frame ended up with no covering prediction window.
    #[error("coverage error: {0}")]
    Coverage(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short machine-parseable category tag, used by the CLI for exit codes
    /// and one-line error reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) | Error::Io(_) => "config",
            Error::Format(_)
            | Error::Value(_)
            | Error::Order(_)
            | Error::Shape(_)
            | Error::EmptyInput(_)
            | Error::DegenerateClass(_)
            | Error::BatchTooSmall(_)
            | Error::Align(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::Coverage(_) => "coverage",
        }
    }
}
