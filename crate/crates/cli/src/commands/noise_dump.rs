//! `noise-dump`: one colored-noise path as CSV (t, d_xi_n, d_w1, d_w2).
//! The t column labels the start of each increment interval.

use anyhow::Result;
use serde::Serialize;

use comfeed_core::colored::{generate_xi_n, KernelStateSpace};
use comfeed_core::sde::rng;

use crate::args::{merge_opt, Cli, NoiseDumpArgs};
use crate::commands::require_seed;
use crate::output;

#[derive(Serialize)]
struct Settings {
    dt: f64,
    steps: usize,
}

pub fn run(cli: &Cli, args: &NoiseDumpArgs) -> Result<()> {
    let cfg = cli.config_map()?;
    let model = args.model.resolve(&cfg)?;
    let derived = model.derive();
    let seed = require_seed(merge_opt(args.seed, &cfg, "seed")?)?;
    let dt = merge_opt(args.dt, &cfg, "dt")?.unwrap_or(0.005 / model.omega0);
    let steps = merge_opt(args.steps, &cfg, "steps")?.unwrap_or(16384);

    let ks = KernelStateSpace::new(&model, &derived);
    let mut stream = rng::trajectory_rng(seed, 0);
    let w1 = rng::wiener_increments(&mut stream, steps, dt);
    let w2 = rng::wiener_increments(&mut stream, steps, dt);
    let path = generate_xi_n(&ks, &w1, &w2, dt)?;

    let dir = output::ensure_out_dir(&cli.out_dir())?;
    output::write_csv(
        &dir.join("noise.csv"),
        &["t", "d_xi_n", "d_w1", "d_w2"],
        (0..steps).map(|k| vec![k as f64 * dt, path.increments[k], w1[k], w2[k]]),
    )?;

    let manifest = output::Manifest {
        build: output::build_id(),
        command: "noise-dump",
        model,
        derived,
        seed: Some(seed),
        settings: Settings { dt, steps },
        outputs: vec!["noise.csv".into()],
    };
    output::write_json(&dir.join("noise_manifest.json"), &manifest)?;
    Ok(())
}
