//! Single-particle dynamics of a harmonically trapped ideal gas under
//! continuous center-of-mass feedback.
//!
//! The model couples a tagged particle (x, p) to the collective
//! center-of-mass mode (X, P) through the feedback loop. Both are driven by
//! the same pair of Wiener processes, so the full four-dimensional system is
//! linear with additive noise and can be solved exactly at the level of
//! Gaussian moments. Eliminating the macroscopic mode in the large-N limit
//! leaves the particle driven by a colored effective noise whose spectrum is
//! computed here both analytically and by Welch estimation from simulated
//! paths.
//!
//! Module map:
//! - [`params`]: physical inputs and the derived dimensionless constants
//! - [`linalg`]: small dense matrix kernels (exponential, Lyapunov, ...)
//! - [`linear_model`]: drift/diffusion matrices and exact moment propagation
//! - [`sde`]: Monte Carlo trajectory ensembles with reproducible RNG streams
//! - [`colored`]: the eliminated-mode colored noise and the reduced model
//! - [`spectrum`]: analytic noise spectrum, Welch estimator, extrema report

pub mod colored;
pub mod error;
pub mod linalg;
pub mod linear_model;
pub mod params;
pub mod sde;
pub mod spectrum;

pub use error::Error;
pub use params::{DerivedParams, ModelParams, UnitSystem};

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
