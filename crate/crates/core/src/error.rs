//! Shared error type for the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed inconsistent shapes, out-of-range values, or an
    /// otherwise malformed argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced a non-finite value or could not be
    /// completed numerically.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A Voronoi cell of this size has no known exact system order, so
    /// the requested loss cannot be evaluated.
    #[error("unsupported cell size {0}: exact gating order is only known for cells of size 1..=3")]
    UnsupportedCellSize(usize),

    /// Gradient descent hit a non-finite loss.
    #[error("divergence at step {step}: {message}")]
    Divergence { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn numerical(msg: impl Into<String>) -> Error {
    Error::NumericalFailure(msg.into())
}
