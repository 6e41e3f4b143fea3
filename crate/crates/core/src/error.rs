//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical or configuration parameter violates its bound. The message
    /// names the parameter and the bound.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// Drift matrix is not Hurwitz: no stationary covariance exists.
    /// Eigenvalues are reported as (re, im) pairs.
    #[error("drift matrix is not Hurwitz (eigenvalues {eigenvalues:?}); no stationary state")]
    NotHurwitz { eigenvalues: Vec<(f64, f64)> },

    /// Moments failed the symmetry / positive-semi-definiteness check.
    #[error("invalid Gaussian moments: {0}")]
    InvalidMoments(String),

    /// Input sequences that must share a length do not.
    #[error("mismatched sequence lengths: {0}")]
    MismatchedLengths(String),

    /// A numeric routine could not complete (singular solve, failed factorization, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Requested storage exceeds the configured memory cap.
    #[error("memory cap exceeded: run needs {required} bytes, cap is {cap} bytes")]
    MemoryCap { required: u64, cap: u64 },

    /// The spectrum estimator preconditions are not met (too few segments,
    /// band wider than the binning allows, inconsistent paths).
    #[error("spectrum estimator: {0}")]
    Estimator(String),

    /// An extrema scan was asked to run on a grid too coarse to be trusted.
    #[error("frequency grid too coarse: {0}")]
    GridTooCoarse(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            message: message.into(),
        }
    }
}
