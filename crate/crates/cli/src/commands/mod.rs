pub mod noise_dump;
pub mod params;
pub mod simulate;
pub mod spectrum;
pub mod stationary;

use anyhow::{bail, Result};

/// Stochastic commands must be given an explicit seed; wall-clock seeding
/// would break byte-reproducibility.
pub fn require_seed(seed: Option<u64>) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => bail!(comfeed_core::Error::InvalidParameter {
            name: "seed",
            message: "--seed is mandatory for stochastic commands".into(),
        }),
    }
}
