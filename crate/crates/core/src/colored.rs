//! The effective colored noise left after eliminating the macroscopic mode,
//! and the reduced single-particle model it drives.
//!
//! In the large-N limit the collective (X, P) block decouples from the tagged
//! particle and its formal solution splits into a deterministic transient
//! plus a stochastic convolution of the two Wiener channels against the
//! damped-oscillator kernel. Folding the stochastic part into the particle's
//! position noise turns the white xi1 into the colored xi_N.
//!
//! The generator here realizes that convolution through the 2-dimensional
//! macroscopic state itself (one exp(a dt) update per step), which is O(n),
//! numerically stable, and valid uniformly across under-, critically- and
//! over-damped regimes: no square root of 1 - alpha^2 is ever taken. The
//! closed trigonometric form of the kernel survives only in
//! [`xi_n_convolution_reference`], the O(n^2) literal evaluation used as a
//! test oracle.
//!
//! The kernel state starts at zero, matching a noise history that begins at
//! t = 0; stationary statistics require discarding a burn-in of order
//! 10 / gamma_n.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::Error;
use crate::linalg;
use crate::linear_model::build_system;
use crate::params::{DerivedParams, ModelParams};
use crate::sde::{self, rng, InitialState, Record, Scheme, SimConfig, TrajectoryEnsemble};
use crate::Result;

/// State-space realization of the macroscopic block driving the colored
/// noise.
#[derive(Debug, Clone)]
pub struct KernelStateSpace {
    /// Drift of the decoupled (X, P) block.
    pub a_mac: [[f64; 2]; 2],
    /// How the Wiener increments (d xi1, d xi2) enter the macroscopic state.
    pub input_map: [[f64; 2]; 2],
    /// Row extracting the feedback contribution -zeta X into the x-equation.
    pub readout: [f64; 2],
    /// Feedback-induced damping rate of the block.
    pub gamma_n: f64,
    zeta: f64,
    sigma: f64,
}

impl KernelStateSpace {
    pub fn new(p: &ModelParams, d: &DerivedParams) -> Self {
        let total_mass = d.total_mass;
        KernelStateSpace {
            a_mac: [
                [-p.zeta * d.theta_n, 1.0 / total_mass],
                [-total_mass * p.omega0 * p.omega0, 0.0],
            ],
            input_map: [
                [d.theta_n * p.zeta * p.sigma, 0.0],
                [0.0, p.hbar * d.theta_n / (2.0 * p.sigma)],
            ],
            readout: [-p.zeta, 0.0],
            gamma_n: d.gamma_n,
            zeta: p.zeta,
            sigma: p.sigma,
        }
    }

    /// exp(a_mac * t) as a dense matrix.
    pub fn propagator(&self, t: f64) -> [[f64; 2]; 2] {
        let a = Array2::from_shape_fn((2, 2), |(i, j)| self.a_mac[i][j] * t);
        let e = linalg::expm(&a);
        [[e[[0, 0]], e[[0, 1]]], [e[[1, 0]], e[[1, 1]]]]
    }

    /// Drift eigenvalues of the block.
    pub fn eigenvalues(&self) -> Vec<num_complex::Complex64> {
        let a = Array2::from_shape_fn((2, 2), |(i, j)| self.a_mac[i][j]);
        linalg::eigenvalues(&a)
    }
}

#[inline]
fn mat2_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// A discretized colored-noise path: the xi_N increments and, optionally, the
/// Wiener increments they were built from.
#[derive(Debug, Clone)]
pub struct ColoredNoisePath {
    pub dt: f64,
    pub increments: Vec<f64>,
    /// Underlying xi1 increments, retained for cross-model tests.
    pub source_w1: Option<Vec<f64>>,
    /// Underlying xi2 increments.
    pub source_w2: Option<Vec<f64>>,
}

impl ColoredNoisePath {
    fn check_lengths(&self) -> Result<()> {
        let n = self.increments.len();
        for (name, src) in [("source_w1", &self.source_w1), ("source_w2", &self.source_w2)] {
            if let Some(s) = src {
                if s.len() != n {
                    return Err(Error::MismatchedLengths(format!(
                        "{name} has {} entries, increments has {n}",
                        s.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate the xi_N increments for given Wiener inputs by running the
/// auxiliary macroscopic state.
///
/// With gamma_n = 0 the memory term vanishes and the output is exactly the
/// xi1 input. The kernel state starts at zero.
pub fn generate_xi_n(
    ks: &KernelStateSpace,
    w1: &[f64],
    w2: &[f64],
    dt: f64,
) -> Result<ColoredNoisePath> {
    if w1.len() != w2.len() {
        return Err(Error::MismatchedLengths(format!(
            "w1 has {} entries, w2 has {}",
            w1.len(),
            w2.len()
        )));
    }
    let n = w1.len();

    let increments = if ks.gamma_n == 0.0 {
        w1.to_vec()
    } else {
        let e = ks.propagator(dt);
        // readout = -zeta on X; the x-noise gain is zeta sigma, so the
        // conversion into xi_N units divides by zeta sigma.
        let xi_gain = [
            ks.readout[0] / (ks.zeta * ks.sigma),
            ks.readout[1] / (ks.zeta * ks.sigma),
        ];
        let mut s = [0.0f64; 2];
        let mut out = Vec::with_capacity(n);
        for k in 0..n {
            out.push(w1[k] + (xi_gain[0] * s[0] + xi_gain[1] * s[1]) * dt);
            let driven = [
                s[0] + ks.input_map[0][0] * w1[k] + ks.input_map[0][1] * w2[k],
                s[1] + ks.input_map[1][0] * w1[k] + ks.input_map[1][1] * w2[k],
            ];
            s = mat2_vec(&e, driven);
        }
        out
    };

    let path = ColoredNoisePath {
        dt,
        increments,
        source_w1: Some(w1.to_vec()),
        source_w2: Some(w2.to_vec()),
    };
    path.check_lengths()?;
    Ok(path)
}

/// Literal evaluation of the memory-kernel convolution, O(n^2), used only as
/// a test oracle.
///
/// The kernel is the closed damped-oscillator form, which divides by
/// sqrt(1 - alpha_n^2); alpha_n = 1 is rejected (the state-space generator
/// covers it). For alpha_n > 1 the hyperbolic continuation is used:
/// cos -> cosh and sin/sqrt(1 - a^2) -> sinh/sqrt(a^2 - 1).
pub fn xi_n_convolution_reference(
    w1: &[f64],
    w2: &[f64],
    dt: f64,
    d: &DerivedParams,
) -> Result<ColoredNoisePath> {
    if w1.len() != w2.len() {
        return Err(Error::MismatchedLengths(format!(
            "w1 has {} entries, w2 has {}",
            w1.len(),
            w2.len()
        )));
    }
    let n = w1.len();
    let gamma = d.gamma_n;

    if gamma == 0.0 {
        return Ok(ColoredNoisePath {
            dt,
            increments: w1.to_vec(),
            source_w1: Some(w1.to_vec()),
            source_w2: Some(w2.to_vec()),
        });
    }
    if d.alpha_n == 1.0 {
        return Err(Error::invalid(
            "alpha_n",
            "the closed kernel form is singular at alpha_n = 1; use the state-space generator",
        ));
    }
    let eta = d.eta.ok_or_else(|| {
        Error::invalid("eta", "gamma_n > 0 requires zeta > 0, so eta must be present")
    })?;
    let alpha = d.alpha_n;

    // Tabulate the two kernel components per lag.
    let mut k_cos = vec![0.0f64; n];
    let mut k_sin = vec![0.0f64; n];
    for lag in 1..n {
        let tau = lag as f64 * dt;
        let env = (-gamma * tau).exp();
        if alpha < 1.0 {
            let omega_n = d.omega_n_sq.sqrt();
            let root = (1.0 - alpha * alpha).sqrt();
            k_cos[lag] = (omega_n * tau).cos() * env;
            k_sin[lag] = (omega_n * tau).sin() / root * env;
        } else {
            let omega_h = (-d.omega_n_sq).sqrt();
            let root = (alpha * alpha - 1.0).sqrt();
            k_cos[lag] = (omega_h * tau).cosh() * env;
            k_sin[lag] = (omega_h * tau).sinh() / root * env;
        }
    }

    let mut increments = Vec::with_capacity(n);
    for k in 0..n {
        let mut acc = 0.0;
        for j in 0..k {
            let lag = k - j;
            acc += w1[j] * k_cos[lag] + (eta * w2[j] - alpha * w1[j]) * k_sin[lag];
        }
        increments.push(w1[k] - 2.0 * gamma * dt * acc);
    }

    Ok(ColoredNoisePath {
        dt,
        increments,
        source_w1: Some(w1.to_vec()),
        source_w2: Some(w2.to_vec()),
    })
}

/// Deterministic transient of the eliminated mode: exp(a_mac t) X0.
pub fn x_deterministic(ks: &KernelStateSpace, x0: [f64; 2], t: f64) -> [f64; 2] {
    mat2_vec(&ks.propagator(t), x0)
}

/// Draw stationary-ish xi_N paths for spectral estimation: each path gets its
/// own noise stream, a burn-in prefix of the requested length is generated
/// and discarded, and `keep_sources` controls whether the Wiener inputs are
/// retained (they double the memory).
pub fn sample_xi_paths(
    ks: &KernelStateSpace,
    n_paths: usize,
    n_keep: usize,
    burn_in: usize,
    dt: f64,
    seed: u64,
    keep_sources: bool,
) -> Result<Vec<ColoredNoisePath>> {
    if n_paths == 0 || n_keep == 0 {
        return Err(Error::invalid("n_paths", "need at least one path and one sample"));
    }
    (0..n_paths)
        .into_par_iter()
        .map(|idx| {
            let mut stream = rng::trajectory_rng(seed, idx as u64);
            let total = burn_in + n_keep;
            let w1 = rng::wiener_increments(&mut stream, total, dt);
            let w2 = rng::wiener_increments(&mut stream, total, dt);
            let mut path = generate_xi_n(ks, &w1, &w2, dt)?;
            path.increments.drain(..burn_in);
            if keep_sources {
                if let Some(v) = path.source_w1.as_mut() {
                    v.drain(..burn_in);
                }
                if let Some(v) = path.source_w2.as_mut() {
                    v.drain(..burn_in);
                }
            } else {
                path.source_w1 = None;
                path.source_w2 = None;
            }
            Ok(path)
        })
        .collect()
}

/// Monte Carlo simulation of the reduced single-particle model.
///
/// Per trajectory: draw (w1, w2), build xi_N through the kernel state, and
/// integrate
///   dx = [p/m - zeta (x/n_mean + X_det(t))] dt + zeta sigma d xi_N
///   dp = -m w0^2 x dt + hbar/(2 sigma n_mean) d xi2
/// with the deterministic macroscopic transient X_det started from
/// `mac_init`. Fed the same Wiener inputs as a decoupled full run with the
/// same initial macroscopic state, the x-paths agree up to O(dt).
pub fn simulate_reduced(
    p: &ModelParams,
    d: &DerivedParams,
    cfg: &SimConfig,
    mac_init: [f64; 2],
) -> Result<TrajectoryEnsemble> {
    if cfg.scheme != Scheme::EulerMaruyama {
        return Err(Error::invalid(
            "scheme",
            "the reduced model is non-Markovian in (x, p); only euler_maruyama applies",
        ));
    }
    let dim = 2usize;
    match &cfg.initial {
        InitialState::Point(z) if z.len() == dim => {}
        InitialState::Gaussian(g) if g.dim() == dim => {}
        _ => {
            return Err(Error::invalid(
                "initial",
                "reduced simulation needs a 2-dimensional initial state",
            ))
        }
    }
    if !cfg.dt.is_finite() || cfg.dt <= 0.0 || cfg.n_steps < 1 || cfg.n_traj < 1 {
        return Err(Error::invalid("config", "dt > 0, n_steps >= 1, n_traj >= 1 required"));
    }

    if cfg.record_stride < 1 || !cfg.n_steps.is_multiple_of(cfg.record_stride) {
        return Err(Error::invalid(
            "record_stride",
            "must be >= 1 and divide n_steps",
        ));
    }
    let stride = cfg.record_stride;
    let record_paths = !matches!(cfg.record, Record::MomentsOnly);
    let record_noise = matches!(cfg.record, Record::PathsAndNoise);
    if stride > 1 && record_paths {
        return Err(Error::invalid(
            "record_stride",
            "path/noise recording requires stride 1",
        ));
    }
    let n_times = cfg.n_steps / stride + 1;
    let per_path = (n_times * dim) as u64 * 8;
    let per_noise = (cfg.n_steps * 2) as u64 * 8;
    let required = match cfg.record {
        Record::MomentsOnly => 0,
        Record::FullPaths => cfg.n_traj as u64 * per_path,
        Record::PathsAndNoise => cfg.n_traj as u64 * (per_path + per_noise),
    };
    if required > cfg.memory_cap_bytes {
        return Err(Error::MemoryCap {
            required,
            cap: cfg.memory_cap_bytes,
        });
    }

    let ks = KernelStateSpace::new(p, d);
    let e_step = ks.propagator(cfg.dt);
    // X-component of the deterministic transient at every step start.
    let mut x_det = Vec::with_capacity(cfg.n_steps);
    let mut xd = mac_init;
    for _ in 0..cfg.n_steps {
        x_det.push(xd[0]);
        xd = mat2_vec(&e_step, xd);
    }

    let init_factor = match &cfg.initial {
        InitialState::Gaussian(g) => Some(linalg::psd_factor(&g.cov)?),
        InitialState::Point(_) => None,
    };

    let xi_gain = if ks.gamma_n > 0.0 {
        [-1.0 / ks.sigma, 0.0]
    } else {
        [0.0, 0.0]
    };
    let p_gain = p.hbar / (2.0 * p.sigma * p.n_mean);
    let x_noise_gain = p.zeta * p.sigma;
    let root_dt = cfg.dt.sqrt();

    const CHUNK: usize = 512;
    struct ChunkOut {
        stats: sde::ChunkStats,
        paths: Option<Vec<f64>>,
        noise: Option<Vec<f64>>,
    }

    let n_chunks = cfg.n_traj.div_ceil(CHUNK);
    let chunk_results: Vec<ChunkOut> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk_idx| {
            let lo = chunk_idx * CHUNK;
            let hi = ((chunk_idx + 1) * CHUNK).min(cfg.n_traj);
            let mut stats = sde::ChunkStats::new(n_times, dim);
            let mut paths = record_paths.then(|| vec![0.0; (hi - lo) * n_times * dim]);
            let mut noise = record_noise.then(|| vec![0.0; (hi - lo) * cfg.n_steps * 2]);

            for traj in lo..hi {
                let mut stream = rng::trajectory_rng(cfg.seed, traj as u64);
                let mut z = [0.0f64; 2];
                match &cfg.initial {
                    InitialState::Point(z0) => z.copy_from_slice(z0),
                    InitialState::Gaussian(g) => {
                        let l = init_factor.as_ref().expect("precomputed");
                        let g0: f64 = StandardNormal.sample(&mut stream);
                        let g1: f64 = StandardNormal.sample(&mut stream);
                        z[0] = g.mean[0] + l[[0, 0]] * g0;
                        z[1] = g.mean[1] + l[[1, 0]] * g0 + l[[1, 1]] * g1;
                    }
                }
                stats.count += 1;
                stats.record(0, dim, &z);
                if let Some(store) = paths.as_mut() {
                    let base = (traj - lo) * n_times * dim;
                    store[base] = z[0];
                    store[base + 1] = z[1];
                }

                let mut s = [0.0f64; 2];
                for step in 0..cfg.n_steps {
                    let z1: f64 = StandardNormal.sample(&mut stream);
                    let z2: f64 = StandardNormal.sample(&mut stream);
                    let w1 = z1 * root_dt;
                    let w2 = z2 * root_dt;

                    let dxi_n = w1 + (xi_gain[0] * s[0] + xi_gain[1] * s[1]) * cfg.dt;
                    if ks.gamma_n > 0.0 {
                        let driven = [
                            s[0] + ks.input_map[0][0] * w1 + ks.input_map[0][1] * w2,
                            s[1] + ks.input_map[1][0] * w1 + ks.input_map[1][1] * w2,
                        ];
                        s = mat2_vec(&e_step, driven);
                    }

                    let drift_x = z[1] / p.mass - p.zeta * (z[0] / p.n_mean + x_det[step]);
                    let drift_p = -p.mass * p.omega0 * p.omega0 * z[0];
                    z = [
                        z[0] + drift_x * cfg.dt + x_noise_gain * dxi_n,
                        z[1] + drift_p * cfg.dt + p_gain * w2,
                    ];

                    if (step + 1) % stride == 0 {
                        stats.record((step + 1) / stride, dim, &z);
                    }
                    if let Some(store) = paths.as_mut() {
                        let base = ((traj - lo) * n_times + step + 1) * dim;
                        store[base] = z[0];
                        store[base + 1] = z[1];
                    }
                    if let Some(store) = noise.as_mut() {
                        let base = ((traj - lo) * cfg.n_steps + step) * 2;
                        store[base] = w1;
                        store[base + 1] = w2;
                    }
                }
            }
            ChunkOut { stats, paths, noise }
        })
        .collect();

    let mut total = sde::ChunkStats::new(n_times, dim);
    for out in &chunk_results {
        total.merge(&out.stats);
    }
    let (sample_mean, sample_cov) = total.finalize(n_times, dim);

    let paths = record_paths.then(|| {
        let mut all = ndarray::Array3::<f64>::zeros((cfg.n_traj, n_times, dim));
        let flat = all.as_slice_mut().expect("contiguous");
        let mut cursor = 0;
        for out in &chunk_results {
            let p = out.paths.as_ref().expect("recorded");
            flat[cursor..cursor + p.len()].copy_from_slice(p);
            cursor += p.len();
        }
        all
    });
    let noise = record_noise.then(|| {
        let mut all = ndarray::Array3::<f64>::zeros((cfg.n_traj, cfg.n_steps, 2));
        let flat = all.as_slice_mut().expect("contiguous");
        let mut cursor = 0;
        for out in &chunk_results {
            let w = out.noise.as_ref().expect("recorded");
            flat[cursor..cursor + w.len()].copy_from_slice(w);
            cursor += w.len();
        }
        all
    });

    Ok(TrajectoryEnsemble {
        times: (0..n_times).map(|i| (i * stride) as f64 * cfg.dt).collect(),
        sample_mean,
        sample_cov,
        paths,
        noise,
        n_traj: cfg.n_traj,
    })
}

/// One resolution level of the shared-noise comparison.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct DtComparison {
    pub dt: f64,
    pub max_abs_dx: f64,
}

/// Path-wise comparison of the reduced model against the decoupled full
/// model under shared Wiener increments, at `n_levels` dyadically refined
/// step sizes starting from `dt_base`. The same underlying fine-grained
/// noise is aggregated for every level, and the reported error per level is
/// the mean over `n_rep` independent noise realizations of the maximum
/// |x_full - x_reduced| over the horizon.
pub fn compare_reduced_vs_full(
    p: &ModelParams,
    d: &DerivedParams,
    dt_base: f64,
    n_levels: usize,
    t_final: f64,
    n_rep: usize,
    seed: u64,
    z0: [f64; 4],
) -> Result<Vec<DtComparison>> {
    if n_levels == 0 || n_rep == 0 {
        return Err(Error::invalid("n_levels", "need at least one level and repetition"));
    }
    let fine_factor = 1usize << (n_levels - 1);
    let n_base = (t_final / dt_base).round() as usize;
    if n_base == 0 {
        return Err(Error::invalid("t_final", "horizon shorter than one base step"));
    }
    let n_fine = n_base * fine_factor;
    let dt_fine = dt_base / fine_factor as f64;

    let sys = build_system(p, d, true)?;
    let ks = KernelStateSpace::new(p, d);

    let mut sums = vec![0.0f64; n_levels];
    for rep in 0..n_rep {
        let mut stream = rng::trajectory_rng(seed, rep as u64);
        let w1_fine = rng::wiener_increments(&mut stream, n_fine, dt_fine);
        let w2_fine = rng::wiener_increments(&mut stream, n_fine, dt_fine);

        for level in 0..n_levels {
            let agg = fine_factor >> level;
            let dt = dt_fine * agg as f64;
            let n_steps = n_fine / agg;
            let aggregate = |w: &[f64]| -> Vec<f64> {
                w.chunks(agg).map(|c| c.iter().sum()).collect()
            };
            let w1 = aggregate(&w1_fine);
            let w2 = aggregate(&w2_fine);

            // Full decoupled model, Euler-Maruyama.
            let mut z = z0.to_vec();
            let mut x_full = Vec::with_capacity(n_steps + 1);
            x_full.push(z[0]);
            for k in 0..n_steps {
                z = sde::step_em(&sys, &z, &[w1[k], w2[k]], dt);
                x_full.push(z[0]);
            }

            // Reduced model with the same increments and matching initial
            // macroscopic state.
            let e_step = ks.propagator(dt);
            let mut xd = [z0[2], z0[3]];
            let mut s = [0.0f64; 2];
            let mut xp = [z0[0], z0[1]];
            let mut max_dx: f64 = 0.0;
            for k in 0..n_steps {
                let dxi_n = if ks.gamma_n > 0.0 {
                    w1[k] - s[0] / ks.sigma * dt
                } else {
                    w1[k]
                };
                let drift_x = xp[1] / p.mass - p.zeta * (xp[0] / p.n_mean + xd[0]);
                let drift_p = -p.mass * p.omega0 * p.omega0 * xp[0];
                xp = [
                    xp[0] + drift_x * dt + p.zeta * p.sigma * dxi_n,
                    xp[1] + drift_p * dt + p.hbar / (2.0 * p.sigma * p.n_mean) * w2[k],
                ];
                if ks.gamma_n > 0.0 {
                    let driven = [
                        s[0] + ks.input_map[0][0] * w1[k] + ks.input_map[0][1] * w2[k],
                        s[1] + ks.input_map[1][0] * w1[k] + ks.input_map[1][1] * w2[k],
                    ];
                    s = mat2_vec(&e_step, driven);
                }
                xd = mat2_vec(&e_step, xd);
                max_dx = max_dx.max((xp[0] - x_full[k + 1]).abs());
            }
            sums[level] += max_dx;
        }
    }

    Ok((0..n_levels)
        .map(|level| DtComparison {
            dt: dt_base / (1u64 << level) as f64,
            max_abs_dx: sums[level] / n_rep as f64,
        })
        .collect())
}

/// Least-squares slope of log(error) against log(dt); the empirical
/// convergence order of a dt sweep.
pub fn fitted_order(levels: &[DtComparison]) -> f64 {
    let n = levels.len() as f64;
    let xs: Vec<f64> = levels.iter().map(|l| l.dt.ln()).collect();
    let ys: Vec<f64> = levels.iter().map(|l| l.max_abs_dx.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_model::GaussianMoments;
    use crate::params::UnitSystem;
    use approx::assert_relative_eq;

    const SQRT_2: f64 = std::f64::consts::SQRT_2;

    fn fig1_point(n: f64) -> (ModelParams, DerivedParams) {
        let p =
            ModelParams::from_dimensionless(0.5, SQRT_2, n, n as u64, UnitSystem::default())
                .unwrap();
        let d = p.derive();
        (p, d)
    }

    #[test]
    fn kernel_block_eigenvalues() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        for e in ks.eigenvalues() {
            assert!((e.re + d.gamma_n).abs() < 1e-10);
            assert!((e.im.abs() - d.omega_n_sq.sqrt()).abs() < 1e-10);
        }
        // Over-damped: two real eigenvalues -gamma +- sqrt(gamma^2 - w0^2).
        let p2 = ModelParams::from_dimensionless(
            1.25,
            1.0 / SQRT_2,
            1000.0,
            1000,
            UnitSystem::default(),
        )
        .unwrap();
        let d2 = p2.derive();
        let ks2 = KernelStateSpace::new(&p2, &d2);
        let disc = (-d2.omega_n_sq).sqrt();
        let mut res: Vec<f64> = ks2.eigenvalues().iter().map(|e| e.re).collect();
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((res[0] - (-d2.gamma_n - disc)).abs() < 1e-10);
        assert!((res[1] - (-d2.gamma_n + disc)).abs() < 1e-10);
    }

    #[test]
    fn gamma_zero_passes_w1_through() {
        let p = ModelParams::new(1.0, 1.0, 0.7, 1.0, 5.0, 1, 1.0).unwrap();
        let d = p.derive();
        assert_eq!(d.gamma_n, 0.0);
        let ks = KernelStateSpace::new(&p, &d);
        let w1 = vec![0.3, -0.2, 0.05];
        let w2 = vec![1.0, 1.0, 1.0];
        let path = generate_xi_n(&ks, &w1, &w2, 0.01).unwrap();
        assert_eq!(path.increments, w1);
    }

    #[test]
    fn zero_inputs_give_zero_output() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        let w = vec![0.0; 100];
        let path = generate_xi_n(&ks, &w, &w, 0.01).unwrap();
        assert!(path.increments.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        assert!(generate_xi_n(&ks, &[0.0; 3], &[0.0; 4], 0.01).is_err());
    }

    #[test]
    fn reference_impulse_response_traces_kernel() {
        let (_p, d) = fig1_point(1000.0);
        let dt = 0.01;
        let n = 400;
        let mut w1 = vec![0.0; n];
        w1[0] = 1.0;
        let w2 = vec![0.0; n];
        let path = xi_n_convolution_reference(&w1, &w2, dt, &d).unwrap();
        assert_eq!(path.increments[0], 1.0);
        let omega_n = d.omega_n_sq.sqrt();
        let root = (1.0 - d.alpha_n * d.alpha_n).sqrt();
        for k in 1..n {
            let tau = k as f64 * dt;
            let want = -2.0 * d.gamma_n
                * dt
                * ((omega_n * tau).cos() - d.alpha_n * (omega_n * tau).sin() / root)
                * (-d.gamma_n * tau).exp();
            assert_relative_eq!(path.increments[k], want, max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn state_space_matches_convolution_reference() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        let dt = 0.005;
        let n = 1 << 12;
        let mut stream = rng::trajectory_rng(77, 0);
        let w1 = rng::wiener_increments(&mut stream, n, dt);
        let w2 = rng::wiener_increments(&mut stream, n, dt);
        let fast = generate_xi_n(&ks, &w1, &w2, dt).unwrap();
        let slow = xi_n_convolution_reference(&w1, &w2, dt, &d).unwrap();
        let scale = fast
            .increments
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let max_dev = fast
            .increments
            .iter()
            .zip(&slow.increments)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(
            max_dev <= 10.0 * dt * scale,
            "max deviation {max_dev:.3e} vs gate {:.3e}",
            10.0 * dt * scale
        );
        // In practice the two routes agree far below the gate.
        assert!(max_dev <= 1e-9 * scale, "max deviation {max_dev:.3e}");
    }

    #[test]
    fn overdamped_reference_matches_state_space() {
        let p = ModelParams::from_dimensionless(
            1.25,
            1.0 / SQRT_2,
            1000.0,
            1000,
            UnitSystem::default(),
        )
        .unwrap();
        let d = p.derive();
        let ks = KernelStateSpace::new(&p, &d);
        let dt = 0.005;
        let n = 2048;
        let mut stream = rng::trajectory_rng(78, 0);
        let w1 = rng::wiener_increments(&mut stream, n, dt);
        let w2 = rng::wiener_increments(&mut stream, n, dt);
        let fast = generate_xi_n(&ks, &w1, &w2, dt).unwrap();
        let slow = xi_n_convolution_reference(&w1, &w2, dt, &d).unwrap();
        for (a, b) in fast.increments.iter().zip(&slow.increments) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn critical_damping_rejected_by_reference_only() {
        // theta_n = 1 working point with alpha exactly 1.
        let p = ModelParams::from_dimensionless(1.0, 1.0, 1000.0, 1001, UnitSystem::default())
            .unwrap();
        let d = p.derive();
        assert_eq!(d.alpha_n, 1.0);
        let ks = KernelStateSpace::new(&p, &d);
        let w = vec![0.1; 16];
        assert!(generate_xi_n(&ks, &w, &w, 0.01).is_ok());
        assert!(xi_n_convolution_reference(&w, &w, 0.01, &d).is_err());
    }

    #[test]
    fn generator_continuous_across_critical_damping() {
        let mut outputs = Vec::new();
        for alpha in [1.0 - 1e-6, 1.0 + 1e-6] {
            let p =
                ModelParams::from_dimensionless(alpha, 1.0, 1000.0, 1001, UnitSystem::default())
                    .unwrap();
            let d = p.derive();
            let ks = KernelStateSpace::new(&p, &d);
            let mut stream = rng::trajectory_rng(5, 0);
            let w1 = rng::wiener_increments(&mut stream, 2048, 0.005);
            let w2 = rng::wiener_increments(&mut stream, 2048, 0.005);
            outputs.push(generate_xi_n(&ks, &w1, &w2, 0.005).unwrap().increments);
        }
        let scale = outputs[0].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in outputs[0].iter().zip(&outputs[1]) {
            assert!((a - b).abs() <= 1e-4 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn linearity_power_of_two_scaling_is_bitwise() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        let dt = 0.01;
        let mut stream = rng::trajectory_rng(3, 0);
        let w1 = rng::wiener_increments(&mut stream, 512, dt);
        let w2 = rng::wiener_increments(&mut stream, 512, dt);
        let base = generate_xi_n(&ks, &w1, &w2, dt).unwrap();
        let w1x: Vec<f64> = w1.iter().map(|v| 2.0 * v).collect();
        let w2x: Vec<f64> = w2.iter().map(|v| 2.0 * v).collect();
        let scaled = generate_xi_n(&ks, &w1x, &w2x, dt).unwrap();
        for (a, b) in base.increments.iter().zip(&scaled.increments) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn linearity_superposition() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        let dt = 0.01;
        let mut stream = rng::trajectory_rng(4, 0);
        let w1a = rng::wiener_increments(&mut stream, 256, dt);
        let w2a = rng::wiener_increments(&mut stream, 256, dt);
        let w1b = rng::wiener_increments(&mut stream, 256, dt);
        let w2b = rng::wiener_increments(&mut stream, 256, dt);
        let (a, b) = (0.7, -1.3);
        let mix1: Vec<f64> = w1a.iter().zip(&w1b).map(|(x, y)| a * x + b * y).collect();
        let mix2: Vec<f64> = w2a.iter().zip(&w2b).map(|(x, y)| a * x + b * y).collect();
        let out_mix = generate_xi_n(&ks, &mix1, &mix2, dt).unwrap();
        let out_a = generate_xi_n(&ks, &w1a, &w2a, dt).unwrap();
        let out_b = generate_xi_n(&ks, &w1b, &w2b, dt).unwrap();
        let scale = out_mix.increments.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..256 {
            let want = a * out_a.increments[i] + b * out_b.increments[i];
            assert!((out_mix.increments[i] - want).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn deterministic_transient_zero_stays_zero() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        for &t in &[0.0, 0.5, 3.0] {
            let out = x_deterministic(&ks, [0.0, 0.0], t);
            assert_eq!(out, [0.0, 0.0]);
        }
    }

    #[test]
    fn underdamped_transient_zero_crossings() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        // Oscillation frequency from the numerically computed eigenvalues.
        let omega = ks
            .eigenvalues()
            .iter()
            .map(|e| e.im.abs())
            .fold(0.0f64, f64::max);
        let spacing = std::f64::consts::PI / omega;
        // Locate the first few zero crossings of X(t) by bisection.
        let x_at = |t: f64| x_deterministic(&ks, [1.0, 0.0], t)[0];
        let mut crossings = Vec::new();
        let grid = 4000;
        let t_max = 4.0 * spacing + 1.0;
        let mut prev = x_at(0.0);
        for i in 1..=grid {
            let t = t_max * i as f64 / grid as f64;
            let cur = x_at(t);
            if prev.signum() != cur.signum() {
                let (mut lo, mut hi) = (t_max * (i - 1) as f64 / grid as f64, t);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if x_at(mid).signum() == x_at(lo).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                crossings.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        assert!(crossings.len() >= 3);
        for pair in crossings.windows(2) {
            assert!((pair[1] - pair[0] - spacing).abs() < 1e-9);
        }
    }

    #[test]
    fn overdamped_transient_does_not_oscillate() {
        let p = ModelParams::from_dimensionless(
            1.25,
            1.0 / SQRT_2,
            1000.0,
            1000,
            UnitSystem::default(),
        )
        .unwrap();
        let d = p.derive();
        let ks = KernelStateSpace::new(&p, &d);
        let mut sign_changes = 0;
        let mut prev = x_deterministic(&ks, [1.0, 0.0], 1e-6)[0];
        for i in 1..2000 {
            let t = 20.0 * i as f64 / 2000.0;
            let cur = x_deterministic(&ks, [1.0, 0.0], t)[0];
            if cur != 0.0 && prev != 0.0 && cur.signum() != prev.signum() {
                sign_changes += 1;
            }
            prev = cur;
        }
        assert!(sign_changes <= 1, "{sign_changes} sign changes");
    }

    #[test]
    fn reduced_matches_decoupled_full_at_first_order() {
        let (p, d) = fig1_point(10_000.0);
        let levels = compare_reduced_vs_full(
            &p,
            &d,
            0.02,
            3,
            20.0,
            4,
            123,
            [0.5, 0.0, 0.3, 0.0],
        )
        .unwrap();
        let order = fitted_order(&levels);
        assert!(order >= 0.9, "fitted order {order:.3}, levels {levels:?}");
    }

    #[test]
    fn gamma_zero_reduced_model_is_white_driven_oscillator() {
        // theta_n = 0: the memory term vanishes identically.
        let p = ModelParams::new(1.0, 1.0, 0.8, 0.9, 5.0, 1, 1.0).unwrap();
        let d = p.derive();
        let cfg = SimConfig::new(0.01, 50, 4, 2, InitialState::Point(vec![0.2, 0.0]));
        let ens = simulate_reduced(&p, &d, &cfg, [0.0, 0.0]).unwrap();
        assert_eq!(ens.sample_mean.ncols(), 2);
        // Against a manual white-noise Euler-Maruyama with the same streams.
        let root_dt = cfg.dt.sqrt();
        for traj in 0..4 {
            let mut stream = rng::trajectory_rng(2, traj as u64);
            let mut z = [0.2, 0.0];
            for _step in 0..50 {
                let z1: f64 = StandardNormal.sample(&mut stream);
                let z2: f64 = StandardNormal.sample(&mut stream);
                let (w1, w2) = (z1 * root_dt, z2 * root_dt);
                let drift_x = z[1] / p.mass - p.zeta * z[0] / p.n_mean;
                let drift_p = -p.mass * p.omega0 * p.omega0 * z[0];
                z = [
                    z[0] + drift_x * cfg.dt + p.zeta * p.sigma * w1,
                    z[1] + drift_p * cfg.dt + p.hbar / (2.0 * p.sigma * p.n_mean) * w2,
                ];
            }
            // Spot-check the ensemble mean contribution only through recompute:
            // the reduced simulator must hit the same endpoint for traj 0.
            if traj == 0 {
                let cfg_one = SimConfig {
                    record: Record::FullPaths,
                    ..SimConfig::new(0.01, 50, 1, 2, InitialState::Point(vec![0.2, 0.0]))
                };
                let one = simulate_reduced(&p, &d, &cfg_one, [0.0, 0.0]).unwrap();
                let paths = one.paths.unwrap();
                assert_relative_eq!(paths[[0, 50, 0]], z[0], max_relative = 1e-12);
                assert_relative_eq!(paths[[0, 50, 1]], z[1], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn reduced_variance_matches_coupled_model_on_settled_horizon() {
        // The coupled model has no stationary covariance (its relative mode
        // is marginal), but from the ground state its covariance settles once
        // the feedback transients die out. Compare the reduced Monte Carlo
        // x-variance there against the exact coupled moments: the gap is the
        // finite-n_mean elimination error plus Monte Carlo noise. dt must
        // keep the explicit-scheme variance inflation e^(w0^2 dt t) well
        // under the gate.
        let (p, d) = fig1_point(10_000.0);
        let sys = build_system(&p, &d, false).unwrap();
        let g0 = GaussianMoments::ground_state(&p);
        let t_final = 10.0 / d.gamma_n;
        let want = crate::linear_model::propagate_moments(&sys, &g0, t_final)
            .unwrap()
            .cov[[0, 0]];

        let dt = 5e-4;
        let n_steps = (t_final / dt).round() as usize;
        let mut part_cov = ndarray::Array2::<f64>::zeros((2, 2));
        part_cov[[0, 0]] = g0.cov[[0, 0]];
        part_cov[[1, 1]] = g0.cov[[1, 1]];
        let init = GaussianMoments::new(ndarray::Array1::zeros(2), part_cov).unwrap();
        let cfg = SimConfig::new(dt, n_steps, 4000, 2718, InitialState::Gaussian(init));
        let ens = simulate_reduced(&p, &d, &cfg, [0.0, 0.0]).unwrap();
        let got = ens.sample_cov[n_steps][[0, 0]];
        let rel = (got - want).abs() / want;
        assert!(rel <= 0.05, "relative discrepancy {rel:.4} (got {got}, want {want})");
    }

    #[test]
    fn reduced_simulation_rejects_bad_configs() {
        let (p, d) = fig1_point(1000.0);
        let mut cfg = SimConfig::new(0.01, 10, 2, 1, InitialState::Point(vec![0.0, 0.0]));
        cfg.scheme = Scheme::ExactGaussian;
        assert!(simulate_reduced(&p, &d, &cfg, [0.0, 0.0]).is_err());

        let cfg = SimConfig::new(0.01, 10, 2, 1, InitialState::Point(vec![0.0; 4]));
        assert!(simulate_reduced(&p, &d, &cfg, [0.0, 0.0]).is_err());
    }

    #[test]
    fn xi_dot_autocorrelation_symmetric_in_lag() {
        let (p, d) = fig1_point(1000.0);
        let ks = KernelStateSpace::new(&p, &d);
        let dt = 0.01;
        let burn = (10.0 / d.gamma_n / dt).ceil() as usize;
        let paths = sample_xi_paths(&ks, 4, 1 << 15, burn, dt, 97, false).unwrap();
        // Estimate C(j) = E[y(t+j) y(t)] across all paths for small |j|.
        let est = |lag: usize| -> f64 {
            let mut acc = 0.0;
            let mut count = 0usize;
            for path in &paths {
                let y = &path.increments;
                for t in 0..(y.len() - lag) {
                    acc += y[t + lag] * y[t];
                    count += 1;
                }
            }
            acc / count as f64
        };
        // Discrete stationary estimator is symmetric up to edge effects;
        // verify directly on lags well below the path length.
        let c0 = est(0);
        for lag in [1usize, 5, 20] {
            let fwd = est(lag);
            // Reverse lag computed by swapping roles of the indices.
            let mut acc = 0.0;
            let mut count = 0usize;
            for path in &paths {
                let y = &path.increments;
                for t in lag..y.len() {
                    acc += y[t - lag] * y[t];
                    count += 1;
                }
            }
            let bwd = acc / count as f64;
            assert!(
                (fwd - bwd).abs() <= 1e-6 * c0.abs(),
                "lag {lag}: {fwd} vs {bwd}"
            );
        }
    }
}
