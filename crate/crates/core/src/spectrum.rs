//! Noise spectrum of the effective colored noise: analytic evaluation,
//! Welch estimation from simulated paths, and extrema classification.
//!
//! Conventions: the spectrum is two-sided with the white-noise background
//! normalized to 1 and is symmetric in omega, so curves are reported on
//! omega >= 0 only, with frequencies in units of the trap frequency.
//!
//! The analytic value is computed from the resolvent of the macroscopic
//! state-space: xi_N-dot responds to the two white channels through transfer
//! functions T1, T2 and S(omega) = |T1|^2 + |T2|^2. This form is uniform in
//! the damping ratio (no under/over-damped branching) and reduces
//! algebraically to
//!
//!   S(w) = [(w0^2 - w^2)^2 + 4 g^2 eta^2 w0^2] / [(w0^2 - w^2)^2 + 4 g^2 w^2]
//!
//! with g the feedback damping rate; the test suite checks that reduction
//! and gates it against the Welch estimate and against the resolvability
//! threshold in (alpha, eta) space.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::colored::{ColoredNoisePath, KernelStateSpace};
use crate::error::Error;
use crate::params::{DerivedParams, ModelParams};
use crate::Result;

/// Where a curve came from.
#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Analytic,
    Estimated {
        n_segments: usize,
        segment_length: usize,
        overlap: usize,
        window: Window,
        dt: f64,
    },
}

/// Curve metadata carried alongside the samples.
#[derive(Debug, Clone, Serialize)]
pub struct CurveMeta {
    pub alpha_n: Option<f64>,
    pub eta: Option<f64>,
    pub provenance: Provenance,
}

/// A sampled spectrum on omega >= 0, frequencies in units of omega0.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumCurve {
    pub omegas: Vec<f64>,
    pub values: Vec<f64>,
    /// Per-bin standard errors; all zero for analytic curves.
    pub stderr: Vec<f64>,
    pub meta: CurveMeta,
}

/// Uniform grid of n points on [0, max] (units of omega0).
pub fn linear_grid(max_over_omega0: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| max_over_omega0 * i as f64 / (n - 1) as f64)
        .collect()
}

/// Analytic spectrum value at angular frequency omega (absolute units).
pub fn analytic_value(p: &ModelParams, d: &DerivedParams, omega: f64) -> f64 {
    if d.gamma_n == 0.0 {
        return 1.0;
    }
    let ks = KernelStateSpace::new(p, d);
    // Resolvent (i w I - A)^-1 of the 2x2 macroscopic drift.
    let a = &ks.a_mac;
    let iw = Complex64::new(0.0, omega);
    let det = (iw - a[0][0]) * (iw - a[1][1]) - a[0][1] * a[1][0];
    let r00 = (iw - a[1][1]) / det;
    let r01 = Complex64::new(a[0][1], 0.0) / det;
    // xi_N-dot = xi1-dot - (1/sigma) X_stoch; X responds to the channels
    // through row 0 of the resolvent times the input gains. The -1/sigma is
    // the readout -zeta X expressed in xi_N units (divided by zeta sigma).
    let gain = -1.0 / p.sigma;
    let t1 = Complex64::new(1.0, 0.0) + gain * r00 * ks.input_map[0][0];
    let t2 = gain * r01 * ks.input_map[1][1];
    t1.norm_sqr() + t2.norm_sqr()
}

/// Analytic spectrum over a grid of frequencies given in units of omega0.
pub fn analytic_spectrum(
    p: &ModelParams,
    d: &DerivedParams,
    omega_grid_over_omega0: &[f64],
) -> Result<SpectrumCurve> {
    if omega_grid_over_omega0.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("omega_grid", "grid must be finite"));
    }
    let values = omega_grid_over_omega0
        .iter()
        .map(|w| analytic_value(p, d, w * p.omega0))
        .collect::<Vec<_>>();
    Ok(SpectrumCurve {
        omegas: omega_grid_over_omega0.to_vec(),
        stderr: vec![0.0; values.len()],
        values,
        meta: CurveMeta {
            alpha_n: Some(d.alpha_n),
            eta: d.eta,
            provenance: Provenance::Analytic,
        },
    })
}

/// Window applied per Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    Rectangular,
}

impl Window {
    fn values(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|k| {
                    0.5 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / len as f64).cos())
                })
                .collect(),
        }
    }
}

/// Welch estimator settings.
#[derive(Debug, Clone, Serialize)]
pub struct WelchSettings {
    pub segment_length: usize,
    /// Samples shared between consecutive segments.
    pub overlap: usize,
    pub window: Window,
    /// Trap frequency, for reporting omegas in units of omega0.
    pub omega0: f64,
    /// Upper edge of the reported band, in units of omega0.
    pub max_omega_over_omega0: f64,
    /// Metadata passed through to the curve.
    pub alpha_n: Option<f64>,
    pub eta: Option<f64>,
}

/// Minimum number of segments for a usable estimate.
pub const MIN_SEGMENTS: usize = 16;

/// Binned white noise rolls off like sinc^2(omega dt / 2); keeping
/// omega_max <= 0.18 / dt bounds that bias below one percent.
pub const SINC_BAND_FACTOR: f64 = 0.18;

/// Streaming Welch accumulator over the increment process d xi / dt.
///
/// Push whole paths (or long chunks of one path); each call segments its
/// input independently, so no segment straddles a push boundary.
pub struct WelchAccumulator {
    settings: WelchSettings,
    dt: Option<f64>,
    window: Vec<f64>,
    window_power: f64,
    n_segments: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    planner_scratch: Vec<Complex64>,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    pending: Option<Vec<Complex64>>,
}

impl WelchAccumulator {
    pub fn new(settings: WelchSettings) -> Result<Self> {
        let len = settings.segment_length;
        if len < 8 {
            return Err(Error::Estimator("segment length must be at least 8".into()));
        }
        if settings.overlap >= len {
            return Err(Error::Estimator(
                "overlap must be smaller than the segment length".into(),
            ));
        }
        let window = settings.window.values(len);
        let window_power = window.iter().map(|w| w * w).sum::<f64>();
        let fft = FftPlanner::new().plan_fft_forward(len);
        let n_bins = len / 2 + 1;
        Ok(WelchAccumulator {
            settings,
            dt: None,
            window,
            window_power,
            n_segments: 0,
            mean: vec![0.0; n_bins],
            m2: vec![0.0; n_bins],
            planner_scratch: Vec::new(),
            fft,
            pending: None,
        })
    }

    /// Add every complete segment of one increment sequence sampled at dt.
    pub fn push_increments(&mut self, increments: &[f64], dt: f64) -> Result<()> {
        match self.dt {
            None => {
                if !dt.is_finite() || dt <= 0.0 {
                    return Err(Error::Estimator("dt must be positive".into()));
                }
                let omega_max = self.settings.max_omega_over_omega0 * self.settings.omega0;
                if omega_max > SINC_BAND_FACTOR / dt {
                    return Err(Error::Estimator(format!(
                        "requested band {omega_max:.3} rad/time violates the binning constraint \
                         omega_max <= {:.3} (= 0.18/dt); use a smaller dt or band",
                        SINC_BAND_FACTOR / dt
                    )));
                }
                self.dt = Some(dt);
            }
            Some(prev) => {
                if prev != dt {
                    return Err(Error::Estimator(format!(
                        "paths disagree on dt: {prev} vs {dt}"
                    )));
                }
            }
        }

        let len = self.settings.segment_length;
        let step = len - self.settings.overlap;
        let mut start = 0;
        while start + len <= increments.len() {
            self.push_segment(&increments[start..start + len]);
            start += step;
        }
        Ok(())
    }

    /// Real segments are processed two at a time through one complex FFT
    /// (even/odd packing), halving the FFT count.
    fn push_segment(&mut self, segment: &[f64]) {
        match self.pending.take() {
            None => {
                let buf: Vec<Complex64> = segment
                    .iter()
                    .zip(&self.window)
                    .map(|(v, w)| Complex64::new(v * w, 0.0))
                    .collect();
                self.pending = Some(buf);
            }
            Some(mut buf) => {
                for (slot, (v, w)) in buf.iter_mut().zip(segment.iter().zip(&self.window)) {
                    slot.im = v * w;
                }
                self.transform_and_accumulate(&mut buf, true);
            }
        }
    }

    fn transform_and_accumulate(&mut self, buf: &mut [Complex64], has_imag: bool) {
        let len = self.settings.segment_length;
        self.planner_scratch
            .resize(self.fft.get_inplace_scratch_len(), Complex64::default());
        self.fft.process_with_scratch(buf, &mut self.planner_scratch);

        // Periodogram of the increment process Delta xi / dt from the raw
        // increments: |FFT(w . Delta xi)|^2 / (dt sum w^2).
        let dt = self.dt.expect("dt fixed before any segment");
        let scale = 1.0 / (dt * self.window_power);
        let n_bins = len / 2 + 1;
        let base = self.n_segments;
        for j in 0..n_bins {
            let conj_idx = (len - j) % len;
            let xj = buf[j];
            let xc = buf[conj_idx].conj();
            // Even/odd split recovers the two real-input transforms.
            let a = 0.5 * (xj + xc);
            self.accumulate_bin(j, a.norm_sqr() * scale, (base + 1) as f64);
            if has_imag {
                let b = Complex64::new(0.0, -0.5) * (xj - xc);
                self.accumulate_bin(j, b.norm_sqr() * scale, (base + 2) as f64);
            }
        }
        self.n_segments += if has_imag { 2 } else { 1 };
    }

    /// Welford update; `count` is the number of segments absorbed by this
    /// bin including the current one.
    fn accumulate_bin(&mut self, j: usize, value: f64, count: f64) {
        let delta = value - self.mean[j];
        self.mean[j] += delta / count;
        self.m2[j] += delta * (value - self.mean[j]);
    }

    /// Number of segments accumulated so far.
    pub fn segments(&self) -> usize {
        self.n_segments
    }

    /// Finalize into a curve on the reported band.
    pub fn finalize(mut self) -> Result<SpectrumCurve> {
        // Flush an unpaired trailing segment.
        if let Some(mut buf) = self.pending.take() {
            self.transform_and_accumulate(&mut buf, false);
        }
        if self.n_segments < MIN_SEGMENTS {
            return Err(Error::Estimator(format!(
                "only {} segments available; at least {MIN_SEGMENTS} required",
                self.n_segments
            )));
        }
        let dt = self
            .dt
            .ok_or_else(|| Error::Estimator("no data pushed".into()))?;
        let len = self.settings.segment_length;
        let m = self.n_segments as f64;

        let d_omega = 2.0 * std::f64::consts::PI / (len as f64 * dt);
        let omega_cap = self.settings.max_omega_over_omega0 * self.settings.omega0;
        let mut omegas = Vec::new();
        let mut values = Vec::new();
        let mut stderr = Vec::new();
        for j in 0..(len / 2 + 1) {
            let omega = j as f64 * d_omega;
            if omega > omega_cap {
                break;
            }
            omegas.push(omega / self.settings.omega0);
            values.push(self.mean[j]);
            stderr.push((self.m2[j] / (m * (m - 1.0))).sqrt());
        }
        Ok(SpectrumCurve {
            omegas,
            values,
            stderr,
            meta: CurveMeta {
                alpha_n: self.settings.alpha_n,
                eta: self.settings.eta,
                provenance: Provenance::Estimated {
                    n_segments: self.n_segments,
                    segment_length: len,
                    overlap: self.settings.overlap,
                    window: self.settings.window,
                    dt,
                },
            },
        })
    }
}

/// Welch-averaged two-sided periodogram of the increment process, normalized
/// so a pure Wiener input is flat at 1 on the reported band. Standard errors
/// come from the scatter across segments.
pub fn estimate_spectrum(
    paths: &[ColoredNoisePath],
    settings: WelchSettings,
) -> Result<SpectrumCurve> {
    if paths.is_empty() {
        return Err(Error::Estimator("no paths supplied".into()));
    }
    let mut acc = WelchAccumulator::new(settings)?;
    for path in paths {
        acc.push_increments(&path.increments, path.dt)?;
    }
    acc.finalize()
}

/// Kind of extremum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    Max,
    Min,
}

/// One located extremum (parabolically refined).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Extremum {
    pub omega: f64,
    pub value: f64,
    pub kind: ExtremumKind,
}

/// Extrema classification of a spectrum curve.
#[derive(Debug, Clone, Serialize)]
pub struct ExtremaReport {
    pub extrema: Vec<Extremum>,
    /// True when the global maximum over omega > 0 sits at a strict interior
    /// local maximum rather than at omega = 0.
    pub two_sided_peaks_resolved: bool,
    /// True when some local minimum lies below 1 by more than three bin
    /// standard errors (zero for analytic curves).
    pub has_subunity_minima: bool,
    /// Location of the deepest sub-unity minimum, if any.
    pub min_location: Option<f64>,
}

/// Locate interior extrema by discrete-derivative sign changes with
/// parabolic refinement; classify the resolvability and sub-unity minima.
///
/// The grid must resolve the band: at least 512 points per 5 omega0 of span.
pub fn find_extrema(curve: &SpectrumCurve) -> Result<ExtremaReport> {
    let n = curve.omegas.len();
    if n < 3 {
        return Err(Error::GridTooCoarse("need at least 3 grid points".into()));
    }
    let span = curve.omegas[n - 1] - curve.omegas[0];
    let required = (512.0 * span / 5.0).ceil() as usize;
    if n < required.max(3) {
        return Err(Error::GridTooCoarse(format!(
            "{n} points over {span:.3} omega0; need at least {required}"
        )));
    }

    let w = &curve.omegas;
    let v = &curve.values;
    let mut extrema = Vec::new();

    // Boundary point at the left edge (omega = 0 for the usual grids).
    if v[1] < v[0] {
        extrema.push(Extremum {
            omega: w[0],
            value: v[0],
            kind: ExtremumKind::Max,
        });
    } else if v[1] > v[0] {
        extrema.push(Extremum {
            omega: w[0],
            value: v[0],
            kind: ExtremumKind::Min,
        });
    }

    let mut interior_max: Option<Extremum> = None;
    for i in 1..(n - 1) {
        let rising = v[i] > v[i - 1];
        let falling_next = v[i] > v[i + 1];
        let falling = v[i] < v[i - 1];
        let rising_next = v[i] < v[i + 1];
        let kind = if rising && falling_next {
            Some(ExtremumKind::Max)
        } else if falling && rising_next {
            Some(ExtremumKind::Min)
        } else {
            None
        };
        if let Some(kind) = kind {
            let (omega, value) = refine_parabolic(w[i - 1], w[i], w[i + 1], v[i - 1], v[i], v[i + 1]);
            let ext = Extremum { omega, value, kind };
            if kind == ExtremumKind::Max
                && interior_max.map(|m| value > m.value).unwrap_or(true)
            {
                interior_max = Some(ext);
            }
            extrema.push(ext);
        }
    }

    let global_max_value = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let two_sided_peaks_resolved = match interior_max {
        Some(m) => m.omega > 0.0 && m.value >= global_max_value,
        None => false,
    };

    let mut min_location = None;
    let mut deepest = f64::INFINITY;
    let mut has_subunity_minima = false;
    for e in &extrema {
        if e.kind == ExtremumKind::Min {
            // Bin standard error at the nearest grid point to the extremum.
            let se = nearest_stderr(curve, e.omega);
            if e.value < 1.0 - 3.0 * se && e.value < deepest {
                deepest = e.value;
                min_location = Some(e.omega);
                has_subunity_minima = true;
            }
        }
    }

    Ok(ExtremaReport {
        extrema,
        two_sided_peaks_resolved,
        has_subunity_minima,
        min_location,
    })
}

fn nearest_stderr(curve: &SpectrumCurve, omega: f64) -> f64 {
    let mut best = 0usize;
    let mut dist = f64::INFINITY;
    for (i, w) in curve.omegas.iter().enumerate() {
        let d = (w - omega).abs();
        if d < dist {
            dist = d;
            best = i;
        }
    }
    curve.stderr[best]
}

fn refine_parabolic(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let denom = y0 - 2.0 * y1 + y2;
    if denom == 0.0 {
        return (x1, y1);
    }
    let h = 0.5 * (x2 - x0);
    let offset = 0.5 * (y0 - y2) / denom * h;
    let value = y1 - 0.125 * (y0 - y2) * (y0 - y2) / denom;
    (x1 + offset, value)
}
