//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "matrix exponential series did not converge after {terms} terms (tail norm {tail:.3e})"
    )]
    ExpNoConvergence { terms: usize, tail: f64 },

    #[error(
        "Riccati iteration did not converge within {max_iter} iterations (last delta {delta:.3e})"
    )]
    DareNoConvergence { max_iter: usize, delta: f64 },

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("ill-conditioned matrix: {0}")]
    IllConditioned(String),

    #[error("likelihood underflow: both mode likelihoods vanished")]
    LikelihoodUnderflow,

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;
