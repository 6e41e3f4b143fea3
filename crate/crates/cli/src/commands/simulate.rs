//! `simulate`: trajectory ensembles of the full, decoupled or reduced model,
//! emitted as moment CSV (plus optional paths), with optional shared-noise
//! comparison and dt-convergence sweeps.

use anyhow::{bail, Result};
use ndarray::Array2;
use serde::Serialize;

use comfeed_core::colored::{compare_reduced_vs_full, fitted_order, simulate_reduced, DtComparison};
use comfeed_core::linalg;
use comfeed_core::linear_model::{build_system, propagate_moments, GaussianMoments};
use comfeed_core::sde::{simulate_ensemble, InitialState, Record, Scheme, SimConfig, TrajectoryEnsemble};

use crate::args::{merge_opt, Cli, Format, InitArg, RecordArg, SchemeArg, SimMode, SimulateArgs};
use crate::commands::require_seed;
use crate::output;

#[derive(Serialize)]
struct Settings {
    mode: &'static str,
    scheme: &'static str,
    record: &'static str,
    init: &'static str,
    dt: f64,
    n_steps: usize,
    n_traj: usize,
    t_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt_sweep: Option<DtSweep>,
}

#[derive(Serialize)]
struct DtSweep {
    levels: Vec<DtComparison>,
    fitted_order: f64,
}

#[derive(Serialize)]
struct CompareReport {
    horizon: f64,
    levels: Vec<DtComparison>,
    fitted_order: f64,
    pass: bool,
}

pub fn run(cli: &Cli, args: &SimulateArgs) -> Result<()> {
    let cfg = cli.config_map()?;
    let model = args.model.resolve(&cfg)?;
    let derived = model.derive();

    let mode = merge_opt(args.mode, &cfg, "mode")?.unwrap_or(SimMode::Full);
    let scheme = merge_opt(args.scheme, &cfg, "scheme")?.unwrap_or(SchemeArg::EulerMaruyama);
    let record = merge_opt(args.record, &cfg, "record")?.unwrap_or(RecordArg::Moments);
    let init = merge_opt(args.init, &cfg, "init")?.unwrap_or(InitArg::Ground);
    let dt = merge_opt(args.dt, &cfg, "dt")?.unwrap_or(0.005 / model.omega0);
    let seed = require_seed(merge_opt(args.seed, &cfg, "seed")?)?;
    let n_traj = merge_opt(args.traj, &cfg, "traj")?.unwrap_or(1000);
    let t_final = merge_opt(args.t_final, &cfg, "t_final")?;
    let steps = merge_opt(args.steps, &cfg, "steps")?;
    let n_steps = match (steps, t_final) {
        (Some(s), None) => s,
        (None, Some(t)) => (t / dt).round().max(1.0) as usize,
        (None, None) => (20.0 / model.omega0 / dt).round() as usize,
        (Some(_), Some(_)) => bail!(comfeed_core::Error::InvalidParameter {
            name: "steps",
            message: "give --steps or --t-final, not both".into(),
        }),
    };

    let core_record = match record {
        RecordArg::Moments => Record::MomentsOnly,
        RecordArg::Paths => Record::FullPaths,
        RecordArg::PathsNoise => Record::PathsAndNoise,
    };
    let core_scheme = match scheme {
        SchemeArg::EulerMaruyama => Scheme::EulerMaruyama,
        SchemeArg::ExactGaussian => Scheme::ExactGaussian,
    };

    let dim = match mode {
        SimMode::Reduced => 2,
        _ => 4,
    };
    let initial = match (init, dim) {
        (InitArg::Zero, d) => InitialState::Point(vec![0.0; d]),
        (InitArg::Ground, 4) => InitialState::Gaussian(GaussianMoments::ground_state(&model)),
        (InitArg::Ground, _) => {
            let mut cov = Array2::<f64>::zeros((2, 2));
            cov[[0, 0]] = model.hbar / (2.0 * model.mass * model.omega0);
            cov[[1, 1]] = model.hbar * model.mass * model.omega0 / 2.0;
            InitialState::Gaussian(GaussianMoments::new(ndarray::Array1::zeros(2), cov)?)
        }
    };

    let mut sim_cfg = SimConfig::new(dt, n_steps, n_traj, seed, initial);
    sim_cfg.scheme = core_scheme;
    sim_cfg.record = core_record;
    if let Some(cap) = merge_opt(args.memory_cap, &cfg, "memory_cap")? {
        sim_cfg.memory_cap_bytes = cap;
    }

    let labels: &[&str] = match mode {
        SimMode::Reduced => &["x", "p"],
        _ => &["x", "p", "X", "P"],
    };

    let ensemble = match mode {
        SimMode::Full => simulate_ensemble(&build_system(&model, &derived, false)?, &sim_cfg)?,
        SimMode::Decoupled => simulate_ensemble(&build_system(&model, &derived, true)?, &sim_cfg)?,
        SimMode::Reduced => {
            if core_scheme != Scheme::EulerMaruyama {
                bail!(comfeed_core::Error::InvalidParameter {
                    name: "scheme",
                    message: "the reduced model supports euler-maruyama only".into(),
                });
            }
            simulate_reduced(&model, &derived, &sim_cfg, [0.0, 0.0])?
        }
    };

    let dir = output::ensure_out_dir(&cli.out_dir())?;
    let mut outputs = Vec::new();

    let moments_name = format!("simulate_moments.{}", data_ext(cli));
    write_moments(cli, &dir.join(&moments_name), &ensemble, labels)?;
    outputs.push(moments_name);

    if let Some(paths) = &ensemble.paths {
        let name = "simulate_paths.csv".to_string();
        let header: Vec<String> = ["traj".to_string(), "t".to_string()]
            .into_iter()
            .chain(labels.iter().map(|l| (*l).to_string()))
            .collect();
        let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let n_times = ensemble.times.len();
        output::write_csv(
            &dir.join(&name),
            &header_refs,
            (0..ensemble.n_traj).flat_map(|traj| {
                let times = &ensemble.times;
                (0..n_times).map(move |t| {
                    let mut row = Vec::with_capacity(2 + labels.len());
                    row.push(traj as f64);
                    row.push(times[t]);
                    for i in 0..labels.len() {
                        row.push(paths[[traj, t, i]]);
                    }
                    row
                })
            }),
        )?;
        outputs.push(name);
    }

    let compare = if args.compare_full {
        if mode != SimMode::Reduced {
            bail!(comfeed_core::Error::InvalidParameter {
                name: "compare-full",
                message: "--compare-full applies to --mode reduced only".into(),
            });
        }
        let horizon = (n_steps as f64 * dt).min(20.0 / model.omega0);
        let levels =
            compare_reduced_vs_full(&model, &derived, dt, 3, horizon, 4, seed, [0.5, 0.0, 0.3, 0.0])?;
        let order = fitted_order(&levels);
        let report = CompareReport {
            horizon,
            levels,
            fitted_order: order,
            pass: order >= 0.9,
        };
        output::write_json(&dir.join("simulate_compare.json"), &report)?;
        outputs.push("simulate_compare.json".into());
        Some(report)
    } else {
        None
    };

    let dt_sweep = if args.dt_sweep {
        Some(dt_convergence(&model, &derived, mode, dt, n_steps)?)
    } else {
        None
    };

    let manifest = output::Manifest {
        build: output::build_id(),
        command: "simulate",
        model,
        derived,
        seed: Some(seed),
        settings: Settings {
            mode: match mode {
                SimMode::Full => "full",
                SimMode::Decoupled => "decoupled",
                SimMode::Reduced => "reduced",
            },
            scheme: match scheme {
                SchemeArg::EulerMaruyama => "euler_maruyama",
                SchemeArg::ExactGaussian => "exact_gaussian",
            },
            record: match record {
                RecordArg::Moments => "moments_only",
                RecordArg::Paths => "full_paths",
                RecordArg::PathsNoise => "paths_and_noise",
            },
            init: match init {
                InitArg::Ground => "ground",
                InitArg::Zero => "zero",
            },
            dt,
            n_steps,
            n_traj,
            t_final: n_steps as f64 * dt,
            dt_sweep,
        },
        outputs,
    };
    output::write_json(&dir.join("simulate_manifest.json"), &manifest)?;

    if let Some(report) = compare {
        if !report.pass {
            bail!(comfeed_core::Error::Numerical(format!(
                "shared-noise comparison fitted order {:.3} < 0.9",
                report.fitted_order
            )));
        }
    }
    Ok(())
}

fn data_ext(cli: &Cli) -> &'static str {
    match cli.format() {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

fn write_moments(
    cli: &Cli,
    path: &std::path::Path,
    ens: &TrajectoryEnsemble,
    labels: &[&str],
) -> Result<()> {
    let dim = labels.len();
    let mut header: Vec<String> = vec!["t".into()];
    for l in labels {
        header.push(format!("mean_{l}"));
    }
    for i in 0..dim {
        for j in i..dim {
            header.push(format!("cov_{}{}", labels[i], labels[j]));
        }
    }

    match cli.format() {
        Format::Json => {
            #[derive(Serialize)]
            struct MomentsPayload<'a> {
                columns: &'a [String],
                rows: Vec<Vec<f64>>,
            }
            let rows = moment_rows(ens, dim).collect();
            output::write_json(path, &MomentsPayload {
                columns: &header,
                rows,
            })
        }
        Format::Csv => {
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            output::write_csv(path, &header_refs, moment_rows(ens, dim))
        }
    }
}

fn moment_rows<'a>(
    ens: &'a TrajectoryEnsemble,
    dim: usize,
) -> impl Iterator<Item = Vec<f64>> + 'a {
    (0..ens.times.len()).map(move |t| {
        let mut row = Vec::with_capacity(1 + dim + dim * (dim + 1) / 2);
        row.push(ens.times[t]);
        for i in 0..dim {
            row.push(ens.sample_mean[[t, i]]);
        }
        for i in 0..dim {
            for j in i..dim {
                row.push(ens.sample_cov[t][[i, j]]);
            }
        }
        row
    })
}

/// Deterministic dt-convergence metadata: the exact covariance recursion of
/// the Euler-Maruyama chain against the exact moments, at dt, dt/2, dt/4.
fn dt_convergence(
    model: &comfeed_core::ModelParams,
    derived: &comfeed_core::DerivedParams,
    mode: SimMode,
    dt: f64,
    n_steps: usize,
) -> Result<DtSweep> {
    let decoupled = matches!(mode, SimMode::Decoupled | SimMode::Reduced);
    let sys = build_system(model, derived, decoupled)?;
    let g0 = GaussianMoments::ground_state(model);
    let t_final = dt * n_steps as f64;
    let exact = propagate_moments(&sys, &g0, t_final)?;

    let mut levels = Vec::new();
    for split in [1usize, 2, 4] {
        let h = dt / split as f64;
        let n = n_steps * split;
        let m = Array2::<f64>::eye(4) + &sys.drift * h;
        let mut c = g0.cov.clone();
        for _ in 0..n {
            c = m.dot(&c).dot(&m.t()) + &(&sys.diffusion * h);
        }
        let diff = &c - &exact.cov;
        levels.push(DtComparison {
            dt: h,
            max_abs_dx: linalg::fro_norm(&diff),
        });
    }
    let order = fitted_order(&levels);
    Ok(DtSweep {
        levels,
        fitted_order: order,
    })
}
