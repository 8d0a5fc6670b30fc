//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed argument: wrong dimension, non-finite entry, empty input, bad index.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A matrix required to be positive definite failed its Cholesky or eigenvalue check.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A step or perturbation left the region where the operation is defined;
    /// callers are expected to shrink the step and retry.
    #[error("step too large: {0}")]
    StepTooLarge(String),

    /// A variance in a denominator is numerically zero.
    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A config, edge-list, or trace file failed to parse.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn not_pd(msg: impl Into<String>) -> Self {
        Error::NotPositiveDefinite(msg.into())
    }
}
