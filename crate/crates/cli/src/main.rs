//! Batch front-end for the feedback-gas simulator.
//!
//! Subcommands dispatch to the computational crate and emit plot-ready CSV
//! plus JSON manifests. Every stochastic command requires an explicit seed
//! and reruns byte-identically under the same build.
//!
//! Exit codes: 2 for invalid parameters or flag combinations, 3 for runtime
//! refusals (non-Hurwitz drift, estimator preconditions, memory cap).

mod args;
mod commands;
mod output;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Params(a) => commands::params::run(&cli, a),
        Command::Stationary(a) => commands::stationary::run(&cli, a),
        Command::Spectrum(a) => commands::spectrum::run(&cli, a),
        Command::Simulate(a) => commands::simulate::run(&cli, a),
        Command::NoiseDump(a) => commands::noise_dump::run(&cli, a),
    };
    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

/// Validation failures exit with 2; runtime refusals with 3.
fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(core_err) = err.downcast_ref::<comfeed_core::Error>() {
        match core_err {
            comfeed_core::Error::InvalidParameter { .. } => 2,
            _ => 3,
        }
    } else {
        2
    }
}
