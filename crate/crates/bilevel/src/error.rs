//! Error type shared by oracle contracts, instance constructors and solvers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BilevelError {
    /// A vector or matrix had the wrong dimension for the requested operation.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// The oracle does not provide the requested capability (e.g. stochastic samplers).
    #[error("unsupported capability: {0}")]
    Unsupported(&'static str),

    /// An argument was outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An instance could not be constructed from the given data.
    #[error("construction error: {0}")]
    Construction(String),

    /// A caller-side contract was violated (nonpositive iteration count, negative inputs, ...).
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, BilevelError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(BilevelError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
