//! Seeded synthetic logs with planted anomalous bursts.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logs::DatasetFormat;
use crate::model::init_rng;

const NORMAL: [&str; 20] = [
    "open file f{}",
    "close file f{}",
    "read block {}",
    "write block {}",
    "send packet {}",
    "receive packet {}",
    "start job {}",
    "stop job {}",
    "connect peer 10.0.0.{}",
    "allocate memory {}",
    "delete cache {}",
    "create session {}",
    "update index",
    "request lease",
    "register node n{}",
    "fetch config",
    "load module",
    "flush buffer",
    "release lock {}",
    "verify checksum",
];
const ANOMALOUS: &str = "machine check fault {}";
const ANOMALY_TAG: &str = "FATAL";

const HDFS_NORMAL: [&str; 6] = [
    "INFO dfs.DataNode: open block {blk} from /10.0.0.{}",
    "INFO dfs.DataNode: receive block {blk} size {}",
    "INFO dfs.FSNamesystem: allocate block {blk}",
    "INFO dfs.DataNode: send block {blk} to /10.0.0.{}",
    "INFO dfs.DataNode: verify block {blk}",
    "INFO dfs.FSNamesystem: delete block {blk}",
];
const HDFS_ANOMALOUS: &str = "WARN dfs.DataNode: exception while serving {blk} to /10.0.0.{}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub format: DatasetFormat,
    /// Windows (labeled-lines) or sessions (hdfs).
    pub sequences: usize,
    /// Events per window or session.
    pub events_per_sequence: usize,
    /// Fraction of sequences holding a planted burst.
    pub anomaly_rate: f64,
    /// Consecutive anomalous events in each burst.
    pub burst: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            format: DatasetFormat::LabeledLines,
            sequences: 5000,
            events_per_sequence: crate::logs::DEFAULT_WINDOW,
            anomaly_rate: 0.05,
            burst: 5,
            seed: 0,
        }
    }
}

/// Raw log text plus, for session logs, the matching label CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticLog {
    pub raw: String,
    pub labels_csv: Option<String>,
    /// Indices of sequences that hold a burst.
    pub anomalous: Vec<usize>,
}

fn fill(template: &str, rng: &mut impl Rng, blk: &str) -> String {
    let t = template.replace("{blk}", blk);
    let mut out = String::with_capacity(t.len() + 8);
    let mut parts = t.split("{}");
    out.push_str(parts.next().unwrap_or(""));
    for p in parts {
        write!(out, "{}", rng.random_range(1..1000)).expect("string write");
        out.push_str(p);
    }
    out
}

/// Generates a log whose sequences (tumbling windows of
/// `events_per_sequence` lines, or hdfs sessions) are anomalous exactly when
/// they were chosen for a burst. `round(anomaly_rate * sequences)` are chosen.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticLog> {
    if cfg.sequences == 0 || cfg.events_per_sequence == 0 {
        return Err(Error::config(
            "synthetic corpus needs at least one sequence and one event",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.anomaly_rate) {
        return Err(Error::config(format!(
            "anomaly rate must be in [0, 1], got {}",
            cfg.anomaly_rate
        )));
    }
    if cfg.burst == 0 || cfg.burst > cfg.events_per_sequence {
        return Err(Error::config(format!(
            "burst must be in 1..={}, got {}",
            cfg.events_per_sequence, cfg.burst
        )));
    }
    let mut rng = init_rng(cfg.seed, 20);
    let k = (cfg.anomaly_rate * cfg.sequences as f64).round() as usize;
    let mut anomalous = sample(&mut rng, cfg.sequences, k).into_vec();
    anomalous.sort_unstable();
    let mut planted = vec![false; cfg.sequences];
    anomalous.iter().for_each(|&i| planted[i] = true);

    let n = cfg.events_per_sequence;
    let mut raw = String::with_capacity(cfg.sequences * n * 24);
    let labels_csv = match cfg.format {
        DatasetFormat::LabeledLines => {
            for &bad in &planted {
                let start = if bad {
                    rng.random_range(0..=n - cfg.burst)
                } else {
                    n
                };
                for j in 0..n {
                    if (start..start + cfg.burst).contains(&j) {
                        raw.push_str(ANOMALY_TAG);
                        raw.push(' ');
                        raw.push_str(&fill(ANOMALOUS, &mut rng, ""));
                    } else {
                        raw.push_str("- ");
                        raw.push_str(&fill(
                            NORMAL[rng.random_range(0..NORMAL.len())],
                            &mut rng,
                            "",
                        ));
                    }
                    raw.push('\n');
                }
            }
            None
        }
        DatasetFormat::Hdfs => {
            let mut csv = String::from("BlockId,Label\n");
            for (s, &bad) in planted.iter().enumerate() {
                let blk = format!("blk_{}", 1_000_000 + s as u64 * 7919);
                let start = if bad {
                    rng.random_range(0..=n - cfg.burst)
                } else {
                    n
                };
                for j in 0..n {
                    let t = if (start..start + cfg.burst).contains(&j) {
                        HDFS_ANOMALOUS
                    } else {
                        HDFS_NORMAL[rng.random_range(0..HDFS_NORMAL.len())]
                    };
                    writeln!(
                        raw,
                        "081109 2036{:02} {} {}",
                        j % 60,
                        100 + s % 900,
                        fill(t, &mut rng, &blk)
                    )
                    .expect("string write");
                }
                writeln!(csv, "{blk},{}", if bad { "Anomaly" } else { "Normal" })
                    .expect("string write");
            }
            Some(csv)
        }
    };
    Ok(SyntheticLog {
        raw,
        labels_csv,
        anomalous,
    })
}
