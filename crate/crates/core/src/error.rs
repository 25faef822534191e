use thiserror::Error;

/// Errors raised by the rate-region machinery.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("user {user} has no nonzero zero-forcing direction")]
    DegenerateZeroForcing { user: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
