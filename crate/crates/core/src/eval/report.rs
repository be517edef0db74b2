use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::error::Result;

/// One axis point of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub axis: String,
    /// Absent when the point failed.
    pub metrics: Option<Metrics>,
    /// Mean compute time per training epoch.
    pub epoch_seconds: Option<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_checksum: Option<String>,
    /// Every prediction took the same class.
    #[serde(default)]
    pub degenerate: bool,
    /// F1 minus the clean-test F1 (injection only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_change: Option<f64>,
    /// `f1_change` over the clean-test F1, when that is non-zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_change_relative: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ReportRow {
    pub fn new(axis: impl Into<String>, seed: u64) -> Self {
        ReportRow {
            axis: axis.into(),
            metrics: None,
            epoch_seconds: None,
            seed,
            init_checksum: None,
            degenerate: false,
            f1_change: None,
            f1_change_relative: None,
            error: None,
        }
    }

    pub fn failed(axis: impl Into<String>, seed: u64, error: impl Into<String>) -> Self {
        ReportRow {
            error: Some(error.into()),
            ..ReportRow::new(axis, seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub protocol: String,
    pub fingerprint: String,
    pub seed: u64,
    /// Digest of the evaluation sequences, where they are shared by all rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_checksum: Option<String>,
    pub rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 10] = [
    "axis",
    "tp",
    "fp",
    "fn",
    "tn",
    "precision",
    "recall",
    "f1",
    "epoch_seconds",
    "seed",
];

impl ExperimentReport {
    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    /// The report with timings cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> ExperimentReport {
        let mut r = self.clone();
        r.rows.iter_mut().for_each(|row| row.epoch_seconds = None);
        r
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        let opt = |x: Option<String>| x.unwrap_or_default();
        for row in &self.rows {
            let m = row.metrics.as_ref();
            w.write_record([
                row.axis.clone(),
                opt(m.map(|m| m.tp.to_string())),
                opt(m.map(|m| m.fp.to_string())),
                opt(m.map(|m| m.fn_.to_string())),
                opt(m.map(|m| m.tn.to_string())),
                opt(m.map(|m| m.precision.to_string())),
                opt(m.map(|m| m.recall.to_string())),
                opt(m.map(|m| m.f1.to_string())),
                opt(row.epoch_seconds.map(|s| s.to_string())),
                row.seed.to_string(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `<protocol>.csv` and `<protocol>.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{}.csv", self.protocol));
        let json_path = dir.join(format!("{}.json", self.protocol));
        fs::write(&csv_path, self.to_csv()?)?;
        fs::write(&json_path, serde_json::to_string_pretty(self)?)?;
        Ok((csv_path, json_path))
    }
}
