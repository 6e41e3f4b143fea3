//! Deterministic file emission: RFC-4180-style CSV and JSON with every float
//! printed at 17 significant digits, so files round-trip exactly and reruns
//! under the same seed are byte-identical. No timestamps anywhere.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// serde_json formatter printing every float as `{:.16e}` (17 significant
/// digits).
struct SciFormatter;

impl serde_json::ser::Formatter for SciFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()>
    where
        W: ?Sized + std::io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize to a JSON string with 17-significant-digit floats.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SciFormatter);
    value.serialize(&mut ser).context("serializing JSON")?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Write a JSON file (always newline-terminated).
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = to_json(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Write a CSV file with a mandatory header row; floats at 17 significant
/// digits.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{}", header.join(",")).context("writing CSV header")?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let mut first = true;
        for v in row {
            if !first {
                write!(out, ",").context("writing CSV")?;
            }
            write!(out, "{v:.16e}").context("writing CSV")?;
            first = false;
        }
        writeln!(out).context("writing CSV")?;
    }
    out.flush().context("flushing CSV")?;
    Ok(())
}

/// Build identity recorded in every manifest.
#[derive(Serialize)]
pub struct BuildId {
    pub name: &'static str,
    pub version: &'static str,
}

pub fn build_id() -> BuildId {
    BuildId {
        name: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
    }
}

/// Run manifest: resolved parameters, seed, build identifier, output files.
#[derive(Serialize)]
pub struct Manifest<S: Serialize> {
    pub build: BuildId,
    pub command: &'static str,
    pub model: comfeed_core::ModelParams,
    pub derived: comfeed_core::DerivedParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub settings: S,
    pub outputs: Vec<String>,
}

/// Create the output directory and return it.
pub fn ensure_out_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip_exactly() {
        let values = [
            0.1,
            2.0 / 3.0,
            std::f64::consts::PI,
            1.0 + f64::EPSILON,
            5e-324,
            1.7976931348623157e308,
            -3.333333333333333e-5,
        ];
        for v in values {
            let text = format!("{v:.16e}");
            let back: f64 = text.parse().unwrap();
            assert_eq!(v.to_bits(), back.to_bits(), "{v} -> {text}");
        }
    }

    #[test]
    fn json_floats_use_scientific_form() {
        #[derive(Serialize)]
        struct Row {
            x: f64,
        }
        let text = to_json(&Row { x: 0.5 }).unwrap();
        assert_eq!(text, r#"{"x":5.0000000000000000e-1}"#);
    }
}
