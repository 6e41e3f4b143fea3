//! Drift and diffusion matrices of the coupled linear model, and exact
//! Gaussian moment propagation.
//!
//! State ordering is fixed as (x, p, X, P) everywhere: tagged-particle
//! position and momentum first, then the collective center-of-mass pair.
//! The two Wiener channels are ordered (xi1, xi2); xi1 drives the position
//! rows and xi2 the momentum rows of both subsystems.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::Error;
use crate::linalg;
use crate::params::{DerivedParams, ModelParams};
use crate::Result;

/// Eigenvalue real parts must be strictly below this for a drift matrix to
/// count as Hurwitz; zeta = 0 is exactly marginal and must be rejected
/// deterministically.
pub const HURWITZ_TOL: f64 = -1e-12;

/// Relative tolerance on the smallest eigenvalue when asserting that a
/// diffusion matrix is positive semi-definite.
pub const DIFFUSION_PSD_TOL: f64 = 1e-12;

/// Relative tolerance for covariance positive semi-definiteness.
pub const COV_PSD_TOL: f64 = 1e-10;

/// A linear stochastic system dz = A z dt + B dW with D = B B^T.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Drift matrix A (n x n).
    pub drift: Array2<f64>,
    /// Noise gain B (n x k); columns are independent Wiener channels.
    pub noise_gain: Array2<f64>,
    /// Diffusion matrix D = B B^T (n x n).
    pub diffusion: Array2<f64>,
}

impl LinearSystem {
    /// Assemble from drift and noise gain; computes D = B B^T and asserts it
    /// is positive semi-definite.
    pub fn new(drift: Array2<f64>, noise_gain: Array2<f64>) -> Result<Self> {
        let n = drift.nrows();
        if drift.ncols() != n {
            return Err(Error::Numerical("drift matrix must be square".into()));
        }
        if noise_gain.nrows() != n {
            return Err(Error::Numerical(
                "noise gain must have one row per state component".into(),
            ));
        }
        let diffusion = noise_gain.dot(&noise_gain.t());
        let min_eig = linalg::sym_eigenvalues(&diffusion)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let norm = linalg::fro_norm(&diffusion);
        if min_eig < -DIFFUSION_PSD_TOL * norm {
            return Err(Error::Numerical(format!(
                "diffusion matrix not PSD: min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(LinearSystem {
            drift,
            noise_gain,
            diffusion,
        })
    }

    /// State dimension.
    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    /// Number of Wiener channels.
    pub fn channels(&self) -> usize {
        self.noise_gain.ncols()
    }

    /// Drift eigenvalues.
    pub fn drift_eigenvalues(&self) -> Vec<Complex64> {
        linalg::eigenvalues(&self.drift)
    }

    /// True when every drift eigenvalue has real part below [`HURWITZ_TOL`].
    pub fn is_hurwitz(&self) -> bool {
        self.drift_eigenvalues().iter().all(|e| e.re < HURWITZ_TOL)
    }
}

/// Gaussian state: mean vector and covariance matrix.
#[derive(Debug, Clone)]
pub struct GaussianMoments {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianMoments {
    /// Validate symmetry and positive semi-definiteness (within
    /// [`COV_PSD_TOL`] relative) and construct. Round-off asymmetry up to the
    /// same tolerance is symmetrized away.
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.dim() != (n, n) {
            return Err(Error::InvalidMoments(format!(
                "covariance is {:?}, expected ({n}, {n})",
                cov.dim()
            )));
        }
        let norm = linalg::fro_norm(&cov);
        let mut sym = cov.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let asym = (cov[[i, j]] - cov[[j, i]]).abs();
                if asym > COV_PSD_TOL * norm.max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidMoments(format!(
                        "covariance asymmetric at ({i},{j}): {asym:.3e}"
                    )));
                }
                let avg = 0.5 * (cov[[i, j]] + cov[[j, i]]);
                sym[[i, j]] = avg;
                sym[[j, i]] = avg;
            }
        }
        let min_eig = linalg::sym_eigenvalues(&sym)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -COV_PSD_TOL * norm {
            return Err(Error::InvalidMoments(format!(
                "covariance not PSD: min eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(GaussianMoments { mean, cov: sym })
    }

    /// Dimension of the state.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Ground state of the full 4-dimensional model: product of the
    /// single-particle and center-of-mass oscillator ground states,
    /// cov = diag(hbar/(2 m w0), hbar m w0 / 2, hbar/(2 M w0), hbar M w0 / 2).
    pub fn ground_state(p: &ModelParams) -> Self {
        let d = p.derive();
        let mut cov = Array2::<f64>::zeros((4, 4));
        cov[[0, 0]] = p.hbar / (2.0 * p.mass * p.omega0);
        cov[[1, 1]] = p.hbar * p.mass * p.omega0 / 2.0;
        cov[[2, 2]] = p.hbar / (2.0 * d.total_mass * p.omega0);
        cov[[3, 3]] = p.hbar * d.total_mass * p.omega0 / 2.0;
        GaussianMoments {
            mean: Array1::zeros(4),
            cov,
        }
    }

    /// Center-of-mass ground state for the 2-dimensional macroscopic block.
    pub fn macroscopic_ground_state(p: &ModelParams) -> Self {
        let d = p.derive();
        let mut cov = Array2::<f64>::zeros((2, 2));
        cov[[0, 0]] = p.hbar / (2.0 * d.total_mass * p.omega0);
        cov[[1, 1]] = p.hbar * d.total_mass * p.omega0 / 2.0;
        GaussianMoments {
            mean: Array1::zeros(2),
            cov,
        }
    }
}

/// Build the 4-dimensional coupled system.
///
/// With `decoupled` the back-action of the tagged particle on the collective
/// mode is dropped (the drift entry A[X, x] is zeroed and nothing else
/// changes), which is the large-N elimination step.
///
/// zeta = 0 switches the whole feedback loop off: measurement and kick exist
/// only as parts of the loop, so both gains vanish and the model is a pair
/// of free oscillators.
pub fn build_system(p: &ModelParams, d: &DerivedParams, decoupled: bool) -> Result<LinearSystem> {
    let mut a = Array2::<f64>::zeros((4, 4));
    // dx = [p/m - zeta (x/n_mean + X)] dt + zeta sigma dxi1
    a[[0, 0]] = -p.zeta / p.n_mean;
    a[[0, 1]] = 1.0 / p.mass;
    a[[0, 2]] = -p.zeta;
    // dp = -m w0^2 x dt + hbar/(2 sigma n_mean) dxi2
    a[[1, 0]] = -p.mass * p.omega0 * p.omega0;
    // dX = [P/M - zeta theta (x/n_mean + X)] dt + theta zeta sigma dxi1
    a[[2, 0]] = if decoupled {
        0.0
    } else {
        -p.zeta * d.theta_n / p.n_mean
    };
    a[[2, 2]] = -p.zeta * d.theta_n;
    a[[2, 3]] = 1.0 / d.total_mass;
    // dP = -M w0^2 X dt + hbar theta/(2 sigma) dxi2
    a[[3, 2]] = -d.total_mass * p.omega0 * p.omega0;

    let mut b = Array2::<f64>::zeros((4, 2));
    if p.zeta > 0.0 {
        b[[0, 0]] = p.zeta * p.sigma;
        b[[1, 1]] = p.hbar / (2.0 * p.sigma * p.n_mean);
        b[[2, 0]] = d.theta_n * p.zeta * p.sigma;
        b[[3, 1]] = p.hbar * d.theta_n / (2.0 * p.sigma);
    }

    LinearSystem::new(a, b)
}

/// The 2-dimensional macroscopic (X, P) block with a given coupling weight.
///
/// `theta` is the coupling weight entering both the damping and the noise
/// gains; pass `d.theta_n` for the physical block or 1.0 for the whole-cloud
/// limit used by the stationary-width checks.
pub fn macroscopic_block(p: &ModelParams, theta: f64) -> Result<LinearSystem> {
    let total_mass = p.mass * p.n_mean;
    let mut a = Array2::<f64>::zeros((2, 2));
    a[[0, 0]] = -p.zeta * theta;
    a[[0, 1]] = 1.0 / total_mass;
    a[[1, 0]] = -total_mass * p.omega0 * p.omega0;

    let mut b = Array2::<f64>::zeros((2, 2));
    if p.zeta > 0.0 {
        b[[0, 0]] = theta * p.zeta * p.sigma;
        b[[1, 1]] = p.hbar * theta / (2.0 * p.sigma);
    }

    LinearSystem::new(a, b)
}

/// Exact transition over a time step: mean multiplier Phi = exp(A t) and
/// accumulated process noise Q(t) = int_0^t exp(A s) D exp(A^T s) ds.
///
/// Computed from the augmented matrix exponential of [[A, D], [0, -A^T]] at
/// a short sub-step, then doubled by composition
/// (Phi, Q) -> (Phi^2, Phi Q Phi^T + Q). The anti-stable -A^T block makes
/// the direct augmented exponential cancel catastrophically once
/// exp(|Re lambda| t) overflows the working precision, so the sub-step is
/// kept at unit scaled norm.
pub fn transition(sys: &LinearSystem, t: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if t.is_nan() || t < 0.0 {
        return Err(Error::invalid("t", "propagation time must be >= 0"));
    }
    let n = sys.dim();
    let norm = linalg::fro_norm(&sys.drift).max(linalg::fro_norm(&sys.diffusion));
    let doublings = if norm * t > 1.0 {
        (norm * t).log2().ceil() as u32
    } else {
        0
    };
    let h = t / f64::powi(2.0, doublings as i32);

    let mut aug = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            aug[[i, j]] = sys.drift[[i, j]] * h;
            aug[[i, n + j]] = sys.diffusion[[i, j]] * h;
            aug[[n + i, n + j]] = -sys.drift[[j, i]] * h;
        }
    }
    // exp of the augmented matrix has blocks [[Phi, M], [0, Phi^-T]] with
    // Q = M Phi^T.
    let e = linalg::expm(&aug);
    let mut phi = Array2::<f64>::zeros((n, n));
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            phi[[i, j]] = e[[i, j]];
            m[[i, j]] = e[[i, n + j]];
        }
    }
    let mut q = symmetrized(&m.dot(&phi.t()));

    for _ in 0..doublings {
        q = symmetrized(&(&phi.dot(&q).dot(&phi.t()) + &q));
        phi = phi.dot(&phi);
    }
    Ok((phi, q))
}

fn symmetrized(a: &Array2<f64>) -> Array2<f64> {
    let at = a.t().to_owned();
    (a + &at) * 0.5
}

/// Propagate Gaussian moments exactly over time t:
/// mean -> Phi mean, cov -> Phi cov Phi^T + Q(t).
pub fn propagate_moments(
    sys: &LinearSystem,
    g0: &GaussianMoments,
    t: f64,
) -> Result<GaussianMoments> {
    if g0.dim() != sys.dim() {
        return Err(Error::InvalidMoments(format!(
            "moments dimension {} does not match system dimension {}",
            g0.dim(),
            sys.dim()
        )));
    }
    let (phi, q) = transition(sys, t)?;
    let mean = phi.dot(&g0.mean);
    let cov = phi.dot(&g0.cov).dot(&phi.t()) + &q;
    GaussianMoments::new(mean, cov)
}

/// Stationary covariance: the solution of A S + S A^T + D = 0.
///
/// Requires the drift to be Hurwitz (every eigenvalue real part strictly
/// below [`HURWITZ_TOL`]); marginal systems such as zeta = 0 are rejected.
pub fn stationary_covariance(sys: &LinearSystem) -> Result<Array2<f64>> {
    let eigs = sys.drift_eigenvalues();
    if eigs.iter().any(|e| e.re >= HURWITZ_TOL) {
        return Err(Error::NotHurwitz {
            eigenvalues: eigs.iter().map(|e| (e.re, e.im)).collect(),
        });
    }
    let s = linalg::lyapunov_stationary(&sys.drift, &sys.diffusion)?;
    let min_eig = linalg::sym_eigenvalues(&s)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -COV_PSD_TOL * linalg::fro_norm(&s) {
        return Err(Error::Numerical(format!(
            "stationary covariance not PSD: min eigenvalue {min_eig:.3e}"
        )));
    }
    Ok(s)
}
