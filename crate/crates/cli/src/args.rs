//! Flag definitions and their resolution against an optional JSON config
//! file. Every value is optional at parse time; defaults are applied after
//! the config merge so that flags always override file values.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use comfeed_core::{ModelParams, UnitSystem};

#[derive(Parser)]
#[command(name = "comfeed", version, about = "Feedback-controlled gas: simulation and noise spectra")]
pub struct Cli {
    /// Output directory (default: $COMFEED_OUT or ./out).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// JSON config file; flags given on the command line take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Payload format for data files (manifests are always JSON).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os("COMFEED_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(Format::Csv)
    }

    /// Flat key -> value map from the optional config file.
    pub fn config_map(&self) -> Result<serde_json::Map<String, Value>> {
        match &self.config {
            None => Ok(serde_json::Map::new()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let value: Value = serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                match value {
                    Value::Object(map) => Ok(map),
                    _ => bail!("config file must hold a JSON object of flag values"),
                }
            }
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
pub enum Command {
    /// Echo the resolved physical and derived parameters as JSON.
    Params(ParamsArgs),
    /// Stationary center-of-mass width against the localization formula.
    Stationary(ParamsArgs),
    /// Analytic and/or estimated noise spectra, with extrema reports.
    Spectrum(SpectrumArgs),
    /// Monte Carlo trajectory ensembles of the full, decoupled or reduced model.
    Simulate(SimulateArgs),
    /// Dump one colored-noise path as CSV (t, d_xi_n, d_w1, d_w2).
    NoiseDump(NoiseDumpArgs),
}

/// Physical model flags, shared by every subcommand.
#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Damping ratio alpha_n (dimensionless route; needs --eta).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Localization ratio eta (dimensionless route; needs --alpha).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Feedback kick strength zeta (physical route).
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Measurement resolution sigma (physical route).
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Sets n-mean and n-cond together.
    #[arg(long)]
    pub n: Option<f64>,
    /// Expected particle number (real, >= 1).
    #[arg(long)]
    pub n_mean: Option<f64>,
    /// Conditioning particle number (integer, >= 1).
    #[arg(long)]
    pub n_cond: Option<u64>,
    /// Particle mass (default 1).
    #[arg(long)]
    pub mass: Option<f64>,
    /// Trap frequency (default 1).
    #[arg(long)]
    pub omega0: Option<f64>,
    /// Action constant (default 1).
    #[arg(long)]
    pub hbar: Option<f64>,
}

#[derive(Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMode {
    Analytic,
    Estimate,
    Both,
}

#[derive(Args)]
pub struct SpectrumArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Figure preset: 1 = (alpha 0.5; eta sqrt2 and 1/sqrt2), 2 = (eta 1/sqrt2; alpha 0.8 and 1.25).
    #[arg(long)]
    pub fig: Option<u8>,
    #[arg(long, value_enum)]
    pub mode: Option<SpectrumMode>,
    /// Upper band edge in units of omega0 (default 5).
    #[arg(long)]
    pub omega_max: Option<f64>,
    /// Analytic grid points (default 2048).
    #[arg(long)]
    pub points: Option<usize>,
    /// Seed; mandatory for estimate/both.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Target number of Welch segments (default 256).
    #[arg(long)]
    pub segments: Option<usize>,
    /// Welch segment length in samples (default 16384).
    #[arg(long)]
    pub segment_length: Option<usize>,
    /// Overlap between consecutive segments in samples (default 0).
    #[arg(long)]
    pub overlap: Option<usize>,
    /// Window function (default hann).
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
    /// Number of independent paths the segments are drawn from (default 8).
    #[arg(long)]
    pub paths: Option<usize>,
    /// Sampling step for the estimator (default 0.01 / omega0).
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowArg {
    Hann,
    Rectangular,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    Full,
    Decoupled,
    Reduced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    EulerMaruyama,
    ExactGaussian,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordArg {
    Moments,
    Paths,
    PathsNoise,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    /// Product of single-particle and center-of-mass ground states.
    Ground,
    /// All trajectories start at the origin.
    Zero,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum)]
    pub mode: Option<SimMode>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Time step (default 0.005 / omega0).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of steps; alternative to --t-final.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Horizon; steps = round(t_final / dt).
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Number of trajectories (default 1000).
    #[arg(long)]
    pub traj: Option<usize>,
    /// Seed; mandatory.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub record: Option<RecordArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Reduced mode only: path-wise comparison against the decoupled full
    /// model with shared noise, at dt, dt/2, dt/4.
    #[arg(long)]
    pub compare_full: bool,
    /// Record a dt-convergence sweep of the ensemble scheme in the manifest.
    #[arg(long)]
    pub dt_sweep: bool,
    /// Memory cap for path storage in bytes (default 2 GiB).
    #[arg(long)]
    pub memory_cap: Option<u64>,
}

#[derive(Args)]
pub struct NoiseDumpArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Seed; mandatory.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling step (default 0.005 / omega0).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Number of increments (default 16384).
    #[arg(long)]
    pub steps: Option<usize>,
}

/// Pull a missing flag value from the config map.
pub fn merge_opt<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    cfg: &serde_json::Map<String, Value>,
    key: &str,
) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.get(key) {
        None => Ok(None),
        Some(v) => {
            let parsed = serde_json::from_value(v.clone())
                .with_context(|| format!("config key `{key}` has the wrong type"))?;
            Ok(Some(parsed))
        }
    }
}

impl ModelArgs {
    /// Merge with the config map and resolve into validated parameters.
    pub fn resolve(&self, cfg: &serde_json::Map<String, Value>) -> Result<ModelParams> {
        let alpha = merge_opt(self.alpha, cfg, "alpha")?;
        let eta = merge_opt(self.eta, cfg, "eta")?;
        let zeta = merge_opt(self.zeta, cfg, "zeta")?;
        let sigma = merge_opt(self.sigma, cfg, "sigma")?;
        let n = merge_opt(self.n, cfg, "n")?;
        let n_mean = merge_opt(self.n_mean, cfg, "n_mean")?;
        let n_cond = merge_opt(self.n_cond, cfg, "n_cond")?;
        let units = UnitSystem {
            mass: merge_opt(self.mass, cfg, "mass")?.unwrap_or(1.0),
            omega0: merge_opt(self.omega0, cfg, "omega0")?.unwrap_or(1.0),
            hbar: merge_opt(self.hbar, cfg, "hbar")?.unwrap_or(1.0),
        };

        let n_mean = n_mean.or(n).unwrap_or(1000.0);
        let n_cond = n_cond.or_else(|| n.map(|v| v.round() as u64)).unwrap_or(1000);

        let dimensionless = alpha.is_some() || eta.is_some();
        let physical = zeta.is_some() || sigma.is_some();
        if dimensionless && physical {
            bail!(comfeed_core::Error::InvalidParameter {
                name: "alpha",
                message: "give either (--alpha, --eta) or (--zeta, --sigma), not both".into(),
            });
        }
        if dimensionless {
            let (Some(alpha), Some(eta)) = (alpha, eta) else {
                bail!(comfeed_core::Error::InvalidParameter {
                    name: "eta",
                    message: "the dimensionless route needs both --alpha and --eta".into(),
                });
            };
            Ok(ModelParams::from_dimensionless(
                alpha, eta, n_mean, n_cond, units,
            )?)
        } else {
            Ok(ModelParams::new(
                units.mass,
                units.omega0,
                zeta.unwrap_or(0.0),
                sigma.unwrap_or(1.0),
                n_mean,
                n_cond,
                units.hbar,
            )?)
        }
    }
}
