//! `params`: echo resolved physical and derived parameters as JSON.

use anyhow::Result;
use serde::Serialize;

use crate::args::{Cli, ParamsArgs};
use crate::output;

#[derive(Serialize)]
struct Payload {
    model: comfeed_core::ModelParams,
    derived: comfeed_core::DerivedParams,
}

pub fn run(cli: &Cli, args: &ParamsArgs) -> Result<()> {
    let cfg = cli.config_map()?;
    let model = args.model.resolve(&cfg)?;
    let derived = model.derive();
    let payload = Payload { model, derived };

    println!("{}", output::to_json(&payload)?);

    if let Some(dir) = &cli.out {
        let dir = output::ensure_out_dir(dir)?;
        output::write_json(&dir.join("params.json"), &payload)?;
        let manifest = output::Manifest {
            build: output::build_id(),
            command: "params",
            model,
            derived,
            seed: None,
            settings: (),
            outputs: vec!["params.json".into()],
        };
        output::write_json(&dir.join("params_manifest.json"), &manifest)?;
    }
    Ok(())
}
