//! `stationary`: Lyapunov-solved center-of-mass width of the whole-cloud
//! macroscopic block against the localization formula
//! dx0 sqrt((eta + 1/eta)/2).

use anyhow::Result;
use serde::Serialize;

use comfeed_core::linear_model::{macroscopic_block, stationary_covariance};

use crate::args::{Cli, ParamsArgs};
use crate::output;

#[derive(Serialize)]
struct Payload {
    dx_stationary: f64,
    dx0: f64,
    ratio: f64,
    eq2_prediction: f64,
    rel_error: f64,
}

pub fn run(cli: &Cli, args: &ParamsArgs) -> Result<()> {
    let cfg = cli.config_map()?;
    let model = args.model.resolve(&cfg)?;
    let derived = model.derive();

    // Whole-cloud weight: the collective mode carries theta -> 1.
    let block = macroscopic_block(&model, 1.0)?;
    let cov = stationary_covariance(&block)?;

    let dx_stationary = cov[[0, 0]].sqrt();
    let dx0 = derived.dx0;
    // A Hurwitz block implies zeta > 0, so eta is present.
    let eta = derived.eta.expect("Hurwitz block has zeta > 0");
    let eq2_prediction = dx0 * ((eta + 1.0 / eta) / 2.0).sqrt();
    let payload = Payload {
        dx_stationary,
        dx0,
        ratio: dx_stationary / dx0,
        eq2_prediction,
        rel_error: (dx_stationary - eq2_prediction).abs() / eq2_prediction,
    };

    println!("{}", output::to_json(&payload)?);

    if let Some(dir) = &cli.out {
        let dir = output::ensure_out_dir(dir)?;
        output::write_json(&dir.join("stationary.json"), &payload)?;
        let manifest = output::Manifest {
            build: output::build_id(),
            command: "stationary",
            model,
            derived,
            seed: None,
            settings: (),
            outputs: vec!["stationary.json".into()],
        };
        output::write_json(&dir.join("stationary_manifest.json"), &manifest)?;
    }
    Ok(())
}
