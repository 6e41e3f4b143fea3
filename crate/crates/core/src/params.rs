//! Physical inputs and derived model constants.
//!
//! `ModelParams` holds the raw physical inputs; `DerivedParams` holds every
//! constant the dynamical equations actually use. The figures of interest are
//! parameterized purely by the dimensionless pair (alpha_n, eta), so
//! [`ModelParams::from_dimensionless`] provides the inverse map from that
//! pair back to physical inputs for a chosen unit system.
//!
//! Unit note: sigma is the effective measurement resolution and carries units
//! of length * sqrt(time), chosen so that zeta * sigma^2 is a squared length.
//! That convention is forced by eta = dx0^2 / (zeta * sigma^2) being
//! dimensionless; it is the only assignment consistent with the model
//! equations.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Unit system for constructing parameters from dimensionless inputs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UnitSystem {
    pub mass: f64,
    pub omega0: f64,
    pub hbar: f64,
}

impl Default for UnitSystem {
    /// hbar = m = omega0 = 1: frequencies in units of the trap frequency.
    fn default() -> Self {
        UnitSystem {
            mass: 1.0,
            omega0: 1.0,
            hbar: 1.0,
        }
    }
}

/// Physical inputs of the model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    /// Particle mass m > 0.
    pub mass: f64,
    /// Trap angular frequency omega_0 > 0.
    pub omega0: f64,
    /// Feedback kick strength zeta >= 0 (1/time).
    pub zeta: f64,
    /// Effective measurement resolution sigma > 0 (length * sqrt(time)).
    pub sigma: f64,
    /// Expected particle number, real >= 1.
    pub n_mean: f64,
    /// Conditioning particle number, integer >= 1.
    pub n_cond: u64,
    /// Action constant hbar > 0.
    pub hbar: f64,
}

/// Constants derived from [`ModelParams`]; every symbol the dynamical
/// equations use.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DerivedParams {
    /// theta_n = (n_cond - 1) / n_mean, coupling weight of the conditioned
    /// macroscopic mode (dimensionless).
    pub theta_n: f64,
    /// gamma_n = zeta * theta_n / 2, feedback-induced damping rate (1/time).
    pub gamma_n: f64,
    /// omega_n_sq = omega0^2 - gamma_n^2 (1/time^2, negative when over-damped).
    pub omega_n_sq: f64,
    /// alpha_n = gamma_n / omega0, damping ratio (dimensionless).
    pub alpha_n: f64,
    /// eta = dx0^2 / (zeta * sigma^2), localization ratio. Absent when
    /// zeta = 0: there is no feedback localization to compare against.
    pub eta: Option<f64>,
    /// Total mass M = mass * n_mean.
    pub total_mass: f64,
    /// Ground-state width of the center of mass, dx0 = sqrt(hbar / (2 M omega0)).
    pub dx0: f64,
}

fn require(cond: bool, name: &'static str, message: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(name, message))
    }
}

impl ModelParams {
    /// Validate and construct. Every bound violation is reported by name.
    pub fn new(
        mass: f64,
        omega0: f64,
        zeta: f64,
        sigma: f64,
        n_mean: f64,
        n_cond: u64,
        hbar: f64,
    ) -> Result<Self> {
        require(mass.is_finite() && mass > 0.0, "mass", "must be finite and > 0")?;
        require(
            omega0.is_finite() && omega0 > 0.0,
            "omega0",
            "must be finite and > 0",
        )?;
        require(
            zeta.is_finite() && zeta >= 0.0,
            "zeta",
            "must be finite and >= 0",
        )?;
        require(
            sigma.is_finite() && sigma > 0.0,
            "sigma",
            "must be finite and > 0",
        )?;
        require(
            n_mean.is_finite() && n_mean >= 1.0,
            "n_mean",
            "must be finite and >= 1",
        )?;
        require(n_cond >= 1, "n_cond", "must be >= 1")?;
        require(
            hbar.is_finite() && hbar > 0.0,
            "hbar",
            "must be finite and > 0",
        )?;
        Ok(ModelParams {
            mass,
            omega0,
            zeta,
            sigma,
            n_mean,
            n_cond,
            hbar,
        })
    }

    /// Derive every model constant from the physical inputs.
    pub fn derive(&self) -> DerivedParams {
        let theta_n = (self.n_cond as f64 - 1.0) / self.n_mean;
        let gamma_n = self.zeta * theta_n / 2.0;
        let omega_n_sq = self.omega0 * self.omega0 - gamma_n * gamma_n;
        let alpha_n = gamma_n / self.omega0;
        let total_mass = self.mass * self.n_mean;
        let dx0 = (self.hbar / (2.0 * total_mass * self.omega0)).sqrt();
        let eta = if self.zeta > 0.0 {
            Some(dx0 * dx0 / (self.zeta * self.sigma * self.sigma))
        } else {
            None
        };
        DerivedParams {
            theta_n,
            gamma_n,
            omega_n_sq,
            alpha_n,
            eta,
            total_mass,
            dx0,
        }
    }

    /// Inverse map: realize a dimensionless working point (alpha_n, eta) in
    /// the given unit system.
    ///
    /// zeta = 2 alpha_n omega0 / theta_n and sigma = sqrt(dx0^2 / (zeta eta)),
    /// so `derive` on the result reproduces (alpha_n, eta). alpha_n = 0 is
    /// rejected: it forces zeta = 0, for which no finite eta is realizable.
    /// theta_n = 0 (n_cond = 1) is rejected for the same reason.
    pub fn from_dimensionless(
        alpha_n: f64,
        eta: f64,
        n_mean: f64,
        n_cond: u64,
        units: UnitSystem,
    ) -> Result<Self> {
        require(
            alpha_n.is_finite() && alpha_n >= 0.0,
            "alpha_n",
            "must be finite and >= 0",
        )?;
        require(eta.is_finite() && eta > 0.0, "eta", "must be finite and > 0")?;
        require(
            n_mean.is_finite() && n_mean >= 1.0,
            "n_mean",
            "must be finite and >= 1",
        )?;
        require(n_cond >= 1, "n_cond", "must be >= 1")?;
        require(
            alpha_n > 0.0,
            "alpha_n",
            "alpha_n = 0 forces zeta = 0, for which eta cannot be realized",
        )?;
        let theta_n = (n_cond as f64 - 1.0) / n_mean;
        require(
            theta_n > 0.0,
            "n_cond",
            "theta_n = 0 (single conditioned particle) cannot realize alpha_n > 0",
        )?;

        let zeta = 2.0 * alpha_n * units.omega0 / theta_n;
        let total_mass = units.mass * n_mean;
        let dx0_sq = units.hbar / (2.0 * total_mass * units.omega0);
        let sigma = (dx0_sq / (zeta * eta)).sqrt();
        ModelParams::new(
            units.mass,
            units.omega0,
            zeta,
            sigma,
            n_mean,
            n_cond,
            units.hbar,
        )
    }
}

/// True when the noise spectrum shows maxima away from omega = 0, i.e. when
/// the damped collective oscillation is resolvable above the feedback noise:
/// alpha_n < 1/sqrt(2) and eta > 1/sqrt(2 - 4 alpha_n^2).
pub fn peaks_resolvable(alpha_n: f64, eta: f64) -> bool {
    if alpha_n * alpha_n >= 0.5 {
        return false;
    }
    eta > 1.0 / (2.0 - 4.0 * alpha_n * alpha_n).sqrt()
}
