//! `spectrum`: analytic and/or Welch-estimated noise spectra, extrema
//! reports, and (in `both` mode) a per-bin z-score comparison at the
//! 4-standard-error gate.

use anyhow::{bail, Result};
use serde::Serialize;

use comfeed_core::colored::{sample_xi_paths, KernelStateSpace};
use comfeed_core::spectrum::{
    analytic_spectrum, analytic_value, estimate_spectrum, find_extrema, linear_grid,
    ExtremaReport, SpectrumCurve, WelchSettings, Window,
};
use comfeed_core::{DerivedParams, ModelParams};

use crate::args::{merge_opt, Cli, Format, SpectrumArgs, SpectrumMode, WindowArg};
use crate::commands::require_seed;
use crate::output;

#[derive(Serialize, Clone)]
struct EstimatorSettings {
    dt: f64,
    segment_length: usize,
    overlap: usize,
    window: Window,
    segments_target: usize,
    paths: usize,
    burn_in_steps: usize,
}

#[derive(Serialize)]
struct Settings {
    mode: &'static str,
    fig: Option<u8>,
    omega_max_over_omega0: f64,
    grid_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimator: Option<EstimatorSettings>,
    curves: Vec<CurveId>,
}

#[derive(Serialize, Clone)]
struct CurveId {
    label: String,
    alpha_n: f64,
    eta: Option<f64>,
}

#[derive(Serialize)]
struct ExtremaEntry {
    label: String,
    alpha_n: f64,
    eta: Option<f64>,
    report: ExtremaReport,
}

#[derive(Serialize)]
struct CompareBin {
    omega_over_omega0: f64,
    analytic: f64,
    estimate: f64,
    stderr: f64,
    z: f64,
}

#[derive(Serialize)]
struct CompareEntry {
    label: String,
    n_bins: usize,
    n_exceed_4se: usize,
    max_abs_z: f64,
    pass: bool,
    bins: Vec<CompareBin>,
}

pub fn run(cli: &Cli, args: &SpectrumArgs) -> Result<()> {
    let cfg = cli.config_map()?;
    let mode = args.mode.unwrap_or(SpectrumMode::Analytic);
    let mode_name = match mode {
        SpectrumMode::Analytic => "analytic",
        SpectrumMode::Estimate => "estimate",
        SpectrumMode::Both => "both",
    };
    let fig = merge_opt(args.fig, &cfg, "fig")?;

    // Figure presets override the (alpha, eta) pair; particle numbers and
    // units still come from the model flags.
    let curves: Vec<(String, ModelParams)> = match fig {
        None => {
            // alpha = 0 is the no-feedback boundary: no eta can be realized
            // there, but the spectrum is simply white, so accept it here and
            // route it through zeta = 0.
            let p = if merge_opt(args.model.alpha, &cfg, "alpha")? == Some(0.0) {
                let mut flat = args.model.clone();
                flat.alpha = None;
                flat.eta = None;
                flat.zeta = Some(0.0);
                flat.sigma = None;
                let mut stripped = cfg.clone();
                for key in ["alpha", "eta", "zeta", "sigma"] {
                    stripped.remove(key);
                }
                flat.resolve(&stripped)?
            } else {
                args.model.resolve(&cfg)?
            };
            vec![("curve".to_string(), p)]
        }
        Some(n) => {
            if args.model.alpha.is_some() || args.model.eta.is_some() {
                bail!(comfeed_core::Error::InvalidParameter {
                    name: "fig",
                    message: "--fig sets (alpha, eta); drop --alpha/--eta".into(),
                });
            }
            let sqrt2 = std::f64::consts::SQRT_2;
            let pairs: [(&str, f64, f64); 2] = match n {
                1 => [("solid", 0.5, sqrt2), ("dashed", 0.5, 1.0 / sqrt2)],
                2 => [("solid", 0.8, 1.0 / sqrt2), ("dashed", 1.25, 1.0 / sqrt2)],
                other => bail!(comfeed_core::Error::InvalidParameter {
                    name: "fig",
                    message: format!("figure preset {other} unknown; use 1 or 2"),
                }),
            };
            let mut out = Vec::new();
            for (label, alpha, eta) in pairs {
                let mut model_args = args.model.clone();
                model_args.alpha = Some(alpha);
                model_args.eta = Some(eta);
                out.push((format!("fig{n}_{label}"), model_args.resolve(&cfg)?));
            }
            out
        }
    };

    let omega_max = merge_opt(args.omega_max, &cfg, "omega_max")?.unwrap_or(5.0);
    let points = merge_opt(args.points, &cfg, "points")?.unwrap_or(2048);
    let grid = linear_grid(omega_max, points);

    let want_analytic = matches!(mode, SpectrumMode::Analytic | SpectrumMode::Both);
    let want_estimate = matches!(mode, SpectrumMode::Estimate | SpectrumMode::Both);

    let seed = if want_estimate {
        Some(require_seed(merge_opt(args.seed, &cfg, "seed")?)?)
    } else {
        None
    };

    let dir = output::ensure_out_dir(&cli.out_dir())?;
    let mut outputs: Vec<String> = Vec::new();
    let mut extrema_entries: Vec<ExtremaEntry> = Vec::new();
    let mut compare_entries: Vec<CompareEntry> = Vec::new();
    let mut estimator_settings: Option<EstimatorSettings> = None;
    let mut curve_ids = Vec::new();

    for (label, p) in &curves {
        let d = p.derive();
        curve_ids.push(CurveId {
            label: label.clone(),
            alpha_n: d.alpha_n,
            eta: d.eta,
        });

        let analytic = if want_analytic {
            let curve = analytic_spectrum(p, &d, &grid)?;
            let name = format!("spectrum_{label}.{}", ext(cli));
            write_curve(cli, &dir.join(&name), &curve)?;
            outputs.push(name);
            let report = find_extrema(&curve)?;
            extrema_entries.push(ExtremaEntry {
                label: label.clone(),
                alpha_n: d.alpha_n,
                eta: d.eta,
                report,
            });
            Some(curve)
        } else {
            None
        };

        if want_estimate {
            let (est, settings) = estimate(args, &cfg, p, &d, omega_max, seed.unwrap())?;
            estimator_settings = Some(settings);
            let name = format!("spectrum_{label}_estimate.{}", ext(cli));
            write_curve(cli, &dir.join(&name), &est)?;
            outputs.push(name);

            if let Some(_analytic) = &analytic {
                compare_entries.push(compare(label, p, &d, &est));
            }
        }
    }

    if !extrema_entries.is_empty() {
        output::write_json(&dir.join("spectrum_extrema.json"), &extrema_entries)?;
        outputs.push("spectrum_extrema.json".into());
    }
    if !compare_entries.is_empty() {
        output::write_json(&dir.join("spectrum_compare.json"), &compare_entries)?;
        outputs.push("spectrum_compare.json".into());
        // The 4-standard-error verdict is data, not a precondition: it lands
        // in the summary (and on stderr), never in the exit code.
        for entry in &compare_entries {
            if !entry.pass {
                eprintln!(
                    "note: {} disagrees with the analytic spectrum in {} of {} bins \
                     (max |z| = {:.2}); see spectrum_compare.json",
                    entry.label, entry.n_exceed_4se, entry.n_bins, entry.max_abs_z
                );
            }
        }
    }

    let (p0, d0) = (&curves[0].1, curves[0].1.derive());
    let manifest = output::Manifest {
        build: output::build_id(),
        command: "spectrum",
        model: *p0,
        derived: d0,
        seed,
        settings: Settings {
            mode: mode_name,
            fig,
            omega_max_over_omega0: omega_max,
            grid_points: points,
            estimator: estimator_settings,
            curves: curve_ids,
        },
        outputs,
    };
    output::write_json(&dir.join("spectrum_manifest.json"), &manifest)?;
    Ok(())
}

fn ext(cli: &Cli) -> &'static str {
    match cli.format() {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn write_curve(cli: &Cli, path: &std::path::Path, curve: &SpectrumCurve) -> Result<()> {
    match cli.format() {
        Format::Json => output::write_json(path, curve),
        Format::Csv => output::write_csv(
            path,
            &["omega_over_omega0", "s_value", "s_stderr"],
            curve
                .omegas
                .iter()
                .zip(&curve.values)
                .zip(&curve.stderr)
                .map(|((&w, &v), &se)| vec![w, v, se]),
        ),
    }
}

fn estimate(
    args: &SpectrumArgs,
    cfg: &serde_json::Map<String, serde_json::Value>,
    p: &ModelParams,
    d: &DerivedParams,
    omega_max: f64,
    seed: u64,
) -> Result<(SpectrumCurve, EstimatorSettings)> {
    let dt = merge_opt(args.dt, cfg, "dt")?.unwrap_or(0.01 / p.omega0);
    let segment_length = merge_opt(args.segment_length, cfg, "segment_length")?.unwrap_or(16384);
    let overlap = merge_opt(args.overlap, cfg, "overlap")?.unwrap_or(0);
    let segments = merge_opt(args.segments, cfg, "segments")?.unwrap_or(256);
    let n_paths = merge_opt(args.paths, cfg, "paths")?.unwrap_or(8);
    let window = match merge_opt(args.window, cfg, "window")? {
        Some(WindowArg::Rectangular) => Window::Rectangular,
        _ => Window::Hann,
    };

    let burn_in = if d.gamma_n > 0.0 {
        (10.0 / d.gamma_n / dt).ceil() as usize
    } else {
        0
    };
    let segs_per_path = segments.div_ceil(n_paths.max(1));
    let step = segment_length - overlap;
    let keep = segment_length + step * segs_per_path.saturating_sub(1);

    let ks = KernelStateSpace::new(p, d);
    let paths = sample_xi_paths(&ks, n_paths, keep, burn_in, dt, seed, false)?;
    let curve = estimate_spectrum(
        &paths,
        WelchSettings {
            segment_length,
            overlap,
            window,
            omega0: p.omega0,
            max_omega_over_omega0: omega_max,
            alpha_n: Some(d.alpha_n),
            eta: d.eta,
        },
    )?;
    let settings = EstimatorSettings {
        dt,
        segment_length,
        overlap,
        window,
        segments_target: segments,
        paths: n_paths,
        burn_in_steps: burn_in,
    };
    Ok((curve, settings))
}

fn compare(label: &str, p: &ModelParams, d: &DerivedParams, est: &SpectrumCurve) -> CompareEntry {
    let mut bins = Vec::with_capacity(est.omegas.len());
    let mut n_exceed = 0;
    let mut max_abs_z = 0.0f64;
    for ((&w, &v), &se) in est.omegas.iter().zip(&est.values).zip(&est.stderr) {
        let truth = analytic_value(p, d, w * p.omega0);
        let z = if se > 0.0 { (v - truth) / se } else { 0.0 };
        if z.abs() > 4.0 {
            n_exceed += 1;
        }
        max_abs_z = max_abs_z.max(z.abs());
        bins.push(CompareBin {
            omega_over_omega0: w,
            analytic: truth,
            estimate: v,
            stderr: se,
            z,
        });
    }
    CompareEntry {
        label: label.to_string(),
        n_bins: bins.len(),
        n_exceed_4se: n_exceed,
        max_abs_z,
        pass: n_exceed == 0,
        bins,
    }
}
