//! Files written by a run: metric CSVs, `summary.json`, `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiments::SeedMetric;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SEED_METRICS_FILE: &str = "seed_metrics.csv";

/// Reals are written with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(file: String, header: &[&str]) -> Self {
        Self {
            file,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(&self.file);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn seed_metrics_table(metrics: &[SeedMetric]) -> Table {
    let mut t = Table::new(SEED_METRICS_FILE.into(), &["seed", "mode", "metric", "value"]);
    t.rows = metrics
        .iter()
        .map(|m| vec![m.seed.to_string(), m.mode.clone(), m.metric.clone(), fmt_f64(m.value)])
        .collect();
    t
}

/// SHA-256 over the resolved config with the output location removed.
pub fn config_digest(cfg: &ExperimentConfig) -> String {
    let canonical = ExperimentConfig {
        output_dir: None,
        ..cfg.clone()
    };
    let bytes = serde_json::to_vec(&canonical).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_kind: Option<String>,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub n_seeds: Option<usize>,
    pub tool_version: String,
    pub started: String,
    pub finished: String,
    pub outputs: Vec<String>,
    pub design_flags: Value,
    pub error: Option<String>,
    pub config: Option<ExperimentConfig>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(dir, MANIFEST_FILE, &serde_json::to_value(self)?)?;
        Ok(())
    }
}

pub fn write_json(dir: &Path, file: &str, value: &Value) -> Result<PathBuf, CliError> {
    let path = dir.join(file);
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }
}
