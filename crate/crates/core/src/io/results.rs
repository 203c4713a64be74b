//! Result bundles: CSV tables, JSON aggregates and a run manifest.
//!
//! CSV floats use the shortest decimal that round-trips, so two runs with the
//! same configuration and seed produce byte-identical tables.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::config::ExperimentConfig;

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        x.to_string()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// Writes every output of one run into a directory and records it in
/// `manifest.json`.
pub struct Bundle {
    dir: PathBuf,
    subcommand: String,
    config: ExperimentConfig,
    outputs: Vec<String>,
    started: Instant,
}

impl Bundle {
    pub fn create(dir: &Path, subcommand: &str, config: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::config(format!("cannot create output directory {}: {e}", dir.display())))?;
        let mut b = Self {
            dir: dir.to_path_buf(),
            subcommand: subcommand.to_string(),
            config: config.clone(),
            outputs: Vec::new(),
            started: Instant::now(),
        };
        b.write_raw("config.toml", config.to_toml().as_bytes())?;
        Ok(b)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write_raw(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        self.write_raw(name, &table.to_bytes())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::State(e.to_string()))?;
        text.push('\n');
        self.write_raw(name, text.as_bytes())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_raw(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand: self.subcommand,
            seed: self.config.seed,
            config: self.config,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let path = self.dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::State(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1e-5, 55e-6, 1.0 / 3.0, -2.5, 0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), fmt_f64(0.25)]);
        assert_eq!(String::from_utf8(t.to_bytes()).unwrap(), "a,b\n1,0.25\n");
    }

    #[test]
    fn bundle_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::create(dir.path(), "tune", &ExperimentConfig::default()).unwrap();
        b.csv("t.csv", &Table::new(&["x"])).unwrap();
        b.json("s.json", &serde_json::json!({"k": 1})).unwrap();
        b.finish().unwrap();
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["subcommand"], "tune");
        assert_eq!(m["outputs"], serde_json::json!(["config.toml", "t.csv", "s.json"]));
        let echoed = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(echoed, ExperimentConfig::default());
    }
}
