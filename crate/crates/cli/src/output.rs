//! CSV tables and the JSON sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const SIDECAR: &str = "run.json";
pub const TOOL: &str = "ssyk";

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Missing values are written as empty fields.
pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}

/// Written next to the data of every run.
///
/// `config` holds every key the command read, defaults included, so feeding
/// the sidecar back through `--config` repeats the run exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub workers: usize,
    pub config: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
}

impl Sidecar {
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(SIDECAR), text)
    }
}

/// File-name fragment for a sparsity value, e.g. `p0.02`.
pub fn p_tag(p: f64) -> String {
    format!("p{}", num(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456789.123, -0.0, 5e-324] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(opt(None), "");
        assert_eq!(p_tag(0.02), "p0.02");
        assert_eq!(p_tag(1.0), "p1");
    }
}
