//! Monte Carlo integration of the linear SDEs with reproducible noise
//! streams and deterministic ensemble statistics.
//!
//! Two schemes are provided. Euler-Maruyama is exact in the noise coupling
//! (additive B) and first-order weak in the drift; the exact-Gaussian scheme
//! samples the one-step transition kernel itself, so its single-step
//! distribution matches the moment propagation with no time-step error at
//! all. Tests use the exact scheme as the discretization-free reference.
//!
//! The ensemble loop is parallel over fixed-size trajectory chunks. Each
//! chunk accumulates its own compensated sums in trajectory order and chunks
//! are merged in chunk order, so the result is a pure function of the
//! configuration (including the seed) regardless of thread scheduling.

pub mod rng;

use ndarray::{Array2, Array3};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg;
use crate::linear_model::{transition, GaussianMoments, LinearSystem};
use crate::Result;

/// Trajectories per accumulation chunk; fixed so the reduction tree does not
/// depend on the thread count.
const CHUNK: usize = 512;

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    ExactGaussian,
}

/// What to keep besides the running moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    /// Sample mean and covariance per time step only.
    MomentsOnly,
    /// Additionally store every trajectory.
    FullPaths,
    /// Store trajectories and the per-channel noise increments driving them.
    /// For the exact-Gaussian scheme the stored values are the raw standard
    /// normal draws (one per state component per step) rather than Wiener
    /// increments.
    PathsAndNoise,
}

/// Initial condition of the ensemble.
#[derive(Debug, Clone)]
pub enum InitialState {
    /// All trajectories start at the same point.
    Point(Vec<f64>),
    /// Trajectories start from independent Gaussian draws.
    Gaussian(GaussianMoments),
}

/// Simulation configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_traj: usize,
    pub seed: u64,
    pub initial: InitialState,
    pub scheme: Scheme,
    pub record: Record,
    /// Keep statistics (and paths) every this many integration steps. Must
    /// divide n_steps. Strides above 1 are for moments-only runs at very
    /// small dt; path/noise recording requires stride 1.
    pub record_stride: usize,
    /// Cap on path/noise storage; exceeding it is an error, not a crash.
    pub memory_cap_bytes: u64,
}

impl SimConfig {
    pub fn new(dt: f64, n_steps: usize, n_traj: usize, seed: u64, initial: InitialState) -> Self {
        SimConfig {
            dt,
            n_steps,
            n_traj,
            seed,
            initial,
            scheme: Scheme::EulerMaruyama,
            record: Record::MomentsOnly,
            record_stride: 1,
            memory_cap_bytes: 2 << 30,
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::invalid("dt", "must be finite and > 0"));
        }
        if self.n_steps < 1 {
            return Err(Error::invalid("n_steps", "must be >= 1"));
        }
        if self.n_traj < 1 {
            return Err(Error::invalid("n_traj", "must be >= 1"));
        }
        if self.record_stride < 1 || !self.n_steps.is_multiple_of(self.record_stride) {
            return Err(Error::invalid(
                "record_stride",
                "must be >= 1 and divide n_steps",
            ));
        }
        if self.record_stride > 1 && !matches!(self.record, Record::MomentsOnly) {
            return Err(Error::invalid(
                "record_stride",
                "path/noise recording requires stride 1",
            ));
        }
        let init_dim = match &self.initial {
            InitialState::Point(z) => z.len(),
            InitialState::Gaussian(g) => g.dim(),
        };
        if init_dim != dim {
            return Err(Error::invalid(
                "initial",
                format!("dimension {init_dim} does not match system dimension {dim}"),
            ));
        }
        Ok(())
    }
}

/// Ensemble output: uniform time grid, running statistics, optional raw data.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    /// n_steps + 1 instants, uniformly spaced by dt.
    pub times: Vec<f64>,
    /// Sample mean per instant, (n_steps + 1) x dim.
    pub sample_mean: Array2<f64>,
    /// Sample covariance per instant (n - 1 normalization).
    pub sample_cov: Vec<Array2<f64>>,
    /// Full paths, n_traj x (n_steps + 1) x dim; present for
    /// `Record::FullPaths` and `Record::PathsAndNoise`.
    pub paths: Option<Array3<f64>>,
    /// Noise draws, n_traj x n_steps x channels; present for
    /// `Record::PathsAndNoise`.
    pub noise: Option<Array3<f64>>,
    pub n_traj: usize,
}

impl TrajectoryEnsemble {
    /// Standard error of the sample mean of component i at a time index.
    pub fn mean_stderr(&self, t_idx: usize, i: usize) -> f64 {
        (self.sample_cov[t_idx][[i, i]] / self.n_traj as f64).sqrt()
    }

    /// Standard error of the sample covariance entry (i, j) at a time index,
    /// from the Gaussian formula var(C_ij) = (C_ii C_jj + C_ij^2) / n.
    pub fn cov_stderr(&self, t_idx: usize, i: usize, j: usize) -> f64 {
        let c = &self.sample_cov[t_idx];
        ((c[[i, i]] * c[[j, j]] + c[[i, j]] * c[[i, j]]) / self.n_traj as f64).sqrt()
    }
}

/// One Euler-Maruyama step: z' = z + A z dt + B dw.
///
/// `dw` holds the Wiener increments of the channels over dt (variance dt
/// each). The noise term is exact because the gains are state-independent.
pub fn step_em(sys: &LinearSystem, z: &[f64], dw: &[f64], dt: f64) -> Vec<f64> {
    let n = sys.dim();
    let k = sys.channels();
    debug_assert_eq!(z.len(), n);
    debug_assert_eq!(dw.len(), k);
    let mut out = vec![0.0; n];
    for i in 0..n {
        let mut drift = 0.0;
        for j in 0..n {
            drift += sys.drift[[i, j]] * z[j];
        }
        let mut noise = 0.0;
        for c in 0..k {
            noise += sys.noise_gain[[i, c]] * dw[c];
        }
        out[i] = z[i] + drift * dt + noise;
    }
    out
}

/// Precomputed one-step transition sampler for the exact-Gaussian scheme:
/// z' = Phi z + L g with g standard normal and L L^T the step covariance.
#[derive(Debug, Clone)]
pub struct ExactStepper {
    pub phi: Array2<f64>,
    pub noise_factor: Array2<f64>,
}

impl ExactStepper {
    pub fn new(sys: &LinearSystem, dt: f64) -> Result<Self> {
        let (phi, q) = transition(sys, dt)?;
        let noise_factor = linalg::psd_factor(&q)?;
        Ok(ExactStepper { phi, noise_factor })
    }

    /// Advance one step given the standard normal draws for this step.
    pub fn step(&self, z: &[f64], normals: &[f64]) -> Vec<f64> {
        let n = z.len();
        let mut out = vec![0.0; n];
        linalg::mat_vec(&self.phi, z, &mut out);
        for i in 0..n {
            let mut s = 0.0;
            // Lower-triangular factor.
            for j in 0..=i {
                s += self.noise_factor[[i, j]] * normals[j];
            }
            out[i] += s;
        }
        out
    }
}

/// Kahan-compensated accumulator for a vector of sums.
#[derive(Clone)]
pub(crate) struct Compensated {
    sum: Vec<f64>,
    carry: Vec<f64>,
}

impl Compensated {
    fn new(len: usize) -> Self {
        Compensated {
            sum: vec![0.0; len],
            carry: vec![0.0; len],
        }
    }

    #[inline]
    fn add(&mut self, idx: usize, value: f64) {
        let y = value - self.carry[idx];
        let t = self.sum[idx] + y;
        self.carry[idx] = (t - self.sum[idx]) - y;
        self.sum[idx] = t;
    }
}

/// Per-chunk running sums of z and of the upper triangle of z z^T at every
/// recorded instant.
pub(crate) struct ChunkStats {
    pub(crate) count: usize,
    first: Compensated,
    second: Compensated,
}

impl ChunkStats {
    pub(crate) fn new(n_times: usize, dim: usize) -> Self {
        let pairs = dim * (dim + 1) / 2;
        ChunkStats {
            count: 0,
            first: Compensated::new(n_times * dim),
            second: Compensated::new(n_times * pairs),
        }
    }

    #[inline]
    pub(crate) fn record(&mut self, t_idx: usize, dim: usize, z: &[f64]) {
        let pairs = dim * (dim + 1) / 2;
        let base1 = t_idx * dim;
        let base2 = t_idx * pairs;
        let mut off = 0;
        for i in 0..dim {
            self.first.add(base1 + i, z[i]);
            for j in i..dim {
                self.second.add(base2 + off, z[i] * z[j]);
                off += 1;
            }
        }
    }

    pub(crate) fn merge(&mut self, other: &ChunkStats) {
        self.count += other.count;
        for (idx, v) in other.first.sum.iter().enumerate() {
            self.first.add(idx, *v);
        }
        for (idx, v) in other.second.sum.iter().enumerate() {
            self.second.add(idx, *v);
        }
    }

    /// Finalize into (mean, covariance) arrays with n - 1 normalization.
    pub(crate) fn finalize(&self, n_times: usize, dim: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
        let n = self.count as f64;
        let pairs = dim * (dim + 1) / 2;
        let mut sample_mean = Array2::<f64>::zeros((n_times, dim));
        let mut sample_cov = Vec::with_capacity(n_times);
        for t in 0..n_times {
            for i in 0..dim {
                sample_mean[[t, i]] = self.first.sum[t * dim + i] / n;
            }
            let mut c = Array2::<f64>::zeros((dim, dim));
            let mut off = 0;
            for i in 0..dim {
                for j in i..dim {
                    let raw = self.second.sum[t * pairs + off];
                    let centered =
                        (raw - n * sample_mean[[t, i]] * sample_mean[[t, j]]) / (n - 1.0).max(1.0);
                    c[[i, j]] = centered;
                    c[[j, i]] = centered;
                    off += 1;
                }
            }
            sample_cov.push(c);
        }
        (sample_mean, sample_cov)
    }
}

fn storage_bytes(cfg: &SimConfig, dim: usize, channels: usize) -> u64 {
    let per_path = (cfg.n_steps as u64 + 1) * dim as u64 * 8;
    let per_noise = cfg.n_steps as u64 * channels as u64 * 8;
    match cfg.record {
        Record::MomentsOnly => 0,
        Record::FullPaths => cfg.n_traj as u64 * per_path,
        Record::PathsAndNoise => cfg.n_traj as u64 * (per_path + per_noise),
    }
}

/// Run the ensemble. Deterministic in (sys, cfg) including the seed:
/// reruns on the same build produce bit-identical output.
pub fn simulate_ensemble(sys: &LinearSystem, cfg: &SimConfig) -> Result<TrajectoryEnsemble> {
    let dim = sys.dim();
    let channels = sys.channels();
    cfg.validate(dim)?;

    let required = storage_bytes(cfg, dim, channels);
    if required > cfg.memory_cap_bytes {
        return Err(Error::MemoryCap {
            required,
            cap: cfg.memory_cap_bytes,
        });
    }

    let exact = match cfg.scheme {
        Scheme::ExactGaussian => Some(ExactStepper::new(sys, cfg.dt)?),
        Scheme::EulerMaruyama => None,
    };
    let init_factor = match &cfg.initial {
        InitialState::Gaussian(g) => Some(linalg::psd_factor(&g.cov)?),
        InitialState::Point(_) => None,
    };

    let stride = cfg.record_stride;
    let n_times = cfg.n_steps / stride + 1;
    let record_paths = !matches!(cfg.record, Record::MomentsOnly);
    let record_noise = matches!(cfg.record, Record::PathsAndNoise);
    let draws_per_step = match cfg.scheme {
        Scheme::EulerMaruyama => channels,
        Scheme::ExactGaussian => dim,
    };

    struct ChunkOut {
        stats: ChunkStats,
        paths: Option<Vec<f64>>,
        noise: Option<Vec<f64>>,
    }

    let n_chunks = cfg.n_traj.div_ceil(CHUNK);
    let chunk_results: Vec<ChunkOut> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk_idx| {
            let lo = chunk_idx * CHUNK;
            let hi = ((chunk_idx + 1) * CHUNK).min(cfg.n_traj);
            let mut stats = ChunkStats::new(n_times, dim);
            let mut paths = record_paths.then(|| vec![0.0; (hi - lo) * n_times * dim]);
            let mut noise = record_noise.then(|| vec![0.0; (hi - lo) * cfg.n_steps * draws_per_step]);

            let mut z = vec![0.0; dim];
            let mut draws = vec![0.0; draws_per_step];
            for traj in lo..hi {
                let mut stream = rng::trajectory_rng(cfg.seed, traj as u64);
                initial_draw(&cfg.initial, init_factor.as_ref(), &mut stream, &mut z);
                stats.count += 1;
                stats.record(0, dim, &z);
                if let Some(p) = paths.as_mut() {
                    let base = (traj - lo) * n_times * dim;
                    p[base..base + dim].copy_from_slice(&z);
                }
                for step in 0..cfg.n_steps {
                    fill_draws(&mut stream, &mut draws);
                    z = match &exact {
                        Some(stepper) => stepper.step(&z, &draws),
                        None => {
                            for d in draws.iter_mut() {
                                *d *= cfg.dt.sqrt();
                            }
                            step_em(sys, &z, &draws, cfg.dt)
                        }
                    };
                    if (step + 1) % stride == 0 {
                        stats.record((step + 1) / stride, dim, &z);
                    }
                    if let Some(p) = paths.as_mut() {
                        let base = ((traj - lo) * n_times + step + 1) * dim;
                        p[base..base + dim].copy_from_slice(&z);
                    }
                    if let Some(w) = noise.as_mut() {
                        let base = ((traj - lo) * cfg.n_steps + step) * draws_per_step;
                        w[base..base + draws_per_step].copy_from_slice(&draws);
                    }
                }
            }
            ChunkOut {
                stats,
                paths,
                noise,
            }
        })
        .collect();

    // Ordered reduction over chunks.
    let mut total = ChunkStats::new(n_times, dim);
    for out in &chunk_results {
        total.merge(&out.stats);
    }

    let (sample_mean, sample_cov) = total.finalize(n_times, dim);

    let paths = record_paths.then(|| {
        let mut all = Array3::<f64>::zeros((cfg.n_traj, n_times, dim));
        let flat = all.as_slice_mut().expect("contiguous");
        let mut cursor = 0;
        for out in &chunk_results {
            let p = out.paths.as_ref().expect("paths recorded");
            flat[cursor..cursor + p.len()].copy_from_slice(p);
            cursor += p.len();
        }
        all
    });
    let noise = record_noise.then(|| {
        let mut all = Array3::<f64>::zeros((cfg.n_traj, cfg.n_steps, draws_per_step));
        let flat = all.as_slice_mut().expect("contiguous");
        let mut cursor = 0;
        for out in &chunk_results {
            let w = out.noise.as_ref().expect("noise recorded");
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

fn initial_draw(
    initial: &InitialState,
    factor: Option<&Array2<f64>>,
    stream: &mut ChaCha8Rng,
    z: &mut [f64],
) {
    match initial {
        InitialState::Point(z0) => z.copy_from_slice(z0),
        InitialState::Gaussian(g) => {
            let l = factor.expect("factor precomputed for Gaussian initial");
            let dim = z.len();
            let mut normals = vec![0.0; dim];
            fill_draws(stream, &mut normals);
            for i in 0..dim {
                let mut s = g.mean[i];
                for j in 0..=i {
                    s += l[[i, j]] * normals[j];
                }
                z[i] = s;
            }
        }
    }
}

#[inline]
fn fill_draws(stream: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(stream);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_model::{build_system, macroscopic_block, propagate_moments, stationary_covariance};
    use crate::params::{ModelParams, UnitSystem};
    use approx::assert_relative_eq;

    const SQRT_2: f64 = std::f64::consts::SQRT_2;

    fn fig1_solid() -> (ModelParams, crate::params::DerivedParams) {
        let p = ModelParams::from_dimensionless(0.5, SQRT_2, 1000.0, 1000, UnitSystem::default())
            .unwrap();
        let d = p.derive();
        (p, d)
    }

    #[test]
    fn em_free_drift() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 1.0, 10.0, 10, 1.0).unwrap();
        let d = p.derive();
        let sys = build_system(&p, &d, false).unwrap();
        let dt = 0.01;
        let z = step_em(&sys, &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0], dt);
        assert_eq!(z, vec![1.0, -dt, 0.0, 0.0]);
    }

    #[test]
    fn em_shared_channel_feeds_both_positions() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let dt: f64 = 0.01;
        let dw1 = dt.sqrt();
        let z = step_em(&sys, &[0.0; 4], &[dw1, 0.0], dt);
        let c = p.zeta * p.sigma;
        assert_relative_eq!(z[0], c * dw1, max_relative = 1e-15);
        assert_relative_eq!(z[2], d.theta_n * c * dw1, max_relative = 1e-15);
        assert_eq!(z[1], 0.0);
        assert_eq!(z[3], 0.0);
    }

    #[test]
    fn exact_step_deterministic_part_is_transition_matrix() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let dt = 0.3;
        let stepper = ExactStepper::new(&sys, dt).unwrap();
        let z0 = [0.7, -0.2, 0.1, 0.4];
        let z = stepper.step(&z0, &[0.0; 4]);
        let mut want = vec![0.0; 4];
        linalg::mat_vec(&stepper.phi, &z0, &mut want);
        for i in 0..4 {
            assert_relative_eq!(z[i], want[i], max_relative = 1e-12, epsilon = 1e-15);
        }
    }

    #[test]
    fn exact_step_noise_vanishes_without_feedback() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 1.0, 10.0, 10, 1.0).unwrap();
        let d = p.derive();
        let sys = build_system(&p, &d, false).unwrap();
        let stepper = ExactStepper::new(&sys, 0.5).unwrap();
        assert_eq!(stepper.noise_factor, Array2::<f64>::zeros((4, 4)));
    }

    #[test]
    fn exact_single_step_ensemble_matches_transition_covariance() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let dt = 0.2;
        let n_traj = 100_000;
        let cfg = SimConfig {
            scheme: Scheme::ExactGaussian,
            ..SimConfig::new(dt, 1, n_traj, 2024, InitialState::Point(vec![0.0; 4]))
        };
        let ens = simulate_ensemble(&sys, &cfg).unwrap();
        let (_, q) = transition(&sys, dt).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let se = ens.cov_stderr(1, i, j);
                let diff = (ens.sample_cov[1][[i, j]] - q[[i, j]]).abs();
                assert!(
                    diff <= 4.0 * se,
                    "cov[{i},{j}] off by {diff:.3e} (4 s.e. = {:.3e})",
                    4.0 * se
                );
            }
        }
    }

    #[test]
    fn ensemble_is_deterministic() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let cfg = SimConfig {
            record: Record::PathsAndNoise,
            ..SimConfig::new(
                0.01,
                50,
                700,
                7,
                InitialState::Gaussian(GaussianMoments::ground_state(&p)),
            )
        };
        let a = simulate_ensemble(&sys, &cfg).unwrap();
        let b = simulate_ensemble(&sys, &cfg).unwrap();
        assert_eq!(a.sample_mean, b.sample_mean);
        assert_eq!(a.paths.unwrap(), b.paths.unwrap());
        assert_eq!(a.noise.unwrap(), b.noise.unwrap());
        for (ca, cb) in a.sample_cov.iter().zip(&b.sample_cov) {
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn single_trajectory_reproducible() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let cfg = SimConfig {
            record: Record::FullPaths,
            ..SimConfig::new(0.01, 100, 1, 99, InitialState::Point(vec![0.1, 0.0, 0.0, 0.0]))
        };
        let a = simulate_ensemble(&sys, &cfg).unwrap();
        let b = simulate_ensemble(&sys, &cfg).unwrap();
        assert_eq!(a.paths.unwrap(), b.paths.unwrap());
    }

    #[test]
    fn recorded_noise_reconstructs_em_paths() {
        // The same xi1 increment must feed both the x and X rows, and the
        // stored increments plus drift must reproduce the stored paths.
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let cfg = SimConfig {
            record: Record::PathsAndNoise,
            ..SimConfig::new(0.02, 25, 3, 5, InitialState::Point(vec![0.0; 4]))
        };
        let ens = simulate_ensemble(&sys, &cfg).unwrap();
        let paths = ens.paths.as_ref().unwrap();
        let noise = ens.noise.as_ref().unwrap();
        // Stored values are already Wiener increments in EM mode.
        for traj in 0..3 {
            let mut z = vec![0.0; 4];
            for step in 0..25 {
                let dw = [noise[[traj, step, 0]], noise[[traj, step, 1]]];
                z = step_em(&sys, &z, &dw, cfg.dt);
                for i in 0..4 {
                    assert_eq!(z[i], paths[[traj, step + 1, i]], "traj {traj} step {step}");
                }
            }
        }
    }

    #[test]
    fn free_evolution_keeps_ground_state_variance() {
        let p = ModelParams::new(1.0, 1.0, 0.0, 1.0, 10.0, 10, 1.0).unwrap();
        let d = p.derive();
        let sys = build_system(&p, &d, false).unwrap();
        let cfg = SimConfig {
            scheme: Scheme::ExactGaussian,
            ..SimConfig::new(
                0.1,
                100,
                4000,
                31,
                InitialState::Gaussian(GaussianMoments::ground_state(&p)),
            )
        };
        let ens = simulate_ensemble(&sys, &cfg).unwrap();
        let want = 0.5;
        for &t_idx in &[0usize, 50, 100] {
            let got = ens.sample_cov[t_idx][[0, 0]];
            let se = ens.cov_stderr(t_idx, 0, 0);
            assert!(
                (got - want).abs() <= 3.0 * se,
                "t index {t_idx}: var {got} vs {want} (3 s.e. {:.3e})",
                3.0 * se
            );
        }
    }

    #[test]
    fn macroscopic_ensemble_reaches_stationary_covariance() {
        let p = ModelParams::from_dimensionless(0.5, SQRT_2, 1000.0, 1001, UnitSystem::default())
            .unwrap();
        let d = p.derive();
        let block = macroscopic_block(&p, 1.0).unwrap();
        let stat = stationary_covariance(&block).unwrap();
        let t_final = 40.0 / d.gamma_n;
        let n_steps = 200;
        let cfg = SimConfig {
            scheme: Scheme::ExactGaussian,
            ..SimConfig::new(
                t_final / n_steps as f64,
                n_steps,
                10_000,
                11,
                InitialState::Gaussian(GaussianMoments::macroscopic_ground_state(&p)),
            )
        };
        let ens = simulate_ensemble(&block, &cfg).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let se = ens.cov_stderr(n_steps, i, j);
                let diff = (ens.sample_cov[n_steps][[i, j]] - stat[[i, j]]).abs();
                assert!(diff <= 3.0 * se, "entry ({i},{j}): {diff:.3e} vs 3 s.e. {:.3e}", 3.0 * se);
            }
        }
    }

    #[test]
    fn em_weak_error_shrinks_linearly() {
        // Covariance discrepancy against the exact propagation at fixed t,
        // measured at dt, dt/2, dt/4; fitted order must be close to one.
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let t_final = 2.0;
        let g0 = GaussianMoments::ground_state(&p);
        let exact = propagate_moments(&sys, &g0, t_final).unwrap();

        let mut errs = Vec::new();
        for &level in &[1usize, 2, 4] {
            let n_steps = 100 * level;
            let dt = t_final / n_steps as f64;
            // Deterministic covariance of the EM chain itself: C' = M C M^T + B B^T dt
            // with M = I + A dt, iterated n_steps times. This isolates the
            // discretization error without Monte Carlo noise.
            let m = Array2::<f64>::eye(4) + &sys.drift * dt;
            let mut c = g0.cov.clone();
            for _ in 0..n_steps {
                c = m.dot(&c).dot(&m.t()) + &(&sys.diffusion * dt);
            }
            let diff = &c - &exact.cov;
            errs.push(linalg::fro_norm(&diff));
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(order1 > 0.9 && order2 > 0.9, "orders {order1:.3}, {order2:.3}");
    }

    #[test]
    fn memory_cap_enforced() {
        let (p, d) = fig1_solid();
        let sys = build_system(&p, &d, false).unwrap();
        let cfg = SimConfig {
            record: Record::FullPaths,
            memory_cap_bytes: 1024,
            ..SimConfig::new(0.01, 1000, 1000, 1, InitialState::Point(vec![0.0; 4]))
        };
        match simulate_ensemble(&sys, &cfg) {
            Err(Error::MemoryCap { required, cap }) => {
                assert!(required > cap);
            }
            other => panic!("expected MemoryCap, got {other:?}"),
        }
    }
}
