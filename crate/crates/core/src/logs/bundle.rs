use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    chronological_split, group_sessions, group_sliding, read_log_bytes, ClassBalance,
    DatasetFormat, Grouping, LabeledSplit, LogSequence, SessionLabels,
};
use crate::error::{Error, Result};

pub const BUNDLE_MANIFEST: &str = "bundle.json";
const TRAIN_FILE: &str = "train.jsonl";
const TEST_FILE: &str = "test.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: DatasetFormat,
    pub grouping: Grouping,
    pub train_ratio: f64,
    pub train: ClassBalance,
    pub test: ClassBalance,
    pub rejected_lines: usize,
    pub invalid_utf8: usize,
}

/// A prepared dataset: the chronological split plus how it was produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub split: LabeledSplit,
}

impl Bundle {
    /// Parses, groups and splits a raw log held in memory.
    pub fn prepare(
        raw: &[u8],
        format: DatasetFormat,
        grouping: Grouping,
        labels: Option<&SessionLabels>,
        train_ratio: f64,
    ) -> Result<Bundle> {
        grouping.validate()?;
        let parsed = read_log_bytes(raw, format);
        let seqs = match grouping {
            Grouping::Session => group_sessions(parsed.events, labels)?,
            Grouping::Window { size, stride } => group_sliding(parsed.events, size, stride)?,
        };
        let split = chronological_split(seqs, train_ratio)?;
        Ok(Bundle {
            manifest: BundleManifest {
                format,
                grouping,
                train_ratio,
                train: ClassBalance::of(&split.train),
                test: ClassBalance::of(&split.test),
                rejected_lines: parsed.rejected.len(),
                invalid_utf8: parsed.invalid_utf8,
            },
            split,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join(BUNDLE_MANIFEST),
            serde_json::to_string_pretty(&self.manifest)?,
        )?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.split.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.split.test)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Bundle> {
        let manifest_path = dir.join(BUNDLE_MANIFEST);
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path));
        }
        let manifest: BundleManifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let train = parse_jsonl(&read_existing(&dir.join(TRAIN_FILE))?)?;
        let test = parse_jsonl(&read_existing(&dir.join(TEST_FILE))?)?;
        let split = LabeledSplit { train, test };
        check_chronology(&split)?;
        Ok(Bundle { manifest, split })
    }
}

fn read_existing(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn write_jsonl(path: &Path, seqs: &[LogSequence]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one sequence per non-blank line.
pub fn parse_jsonl(text: &str) -> Result<Vec<LogSequence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let seq: LogSequence = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if seq.events.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                reason: "sequence has no events".into(),
            });
        }
        out.push(seq);
    }
    Ok(out)
}

fn check_chronology(split: &LabeledSplit) -> Result<()> {
    let all: Vec<usize> = split.all().map(|s| s.order_key).collect();
    if all.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Load {
            what: "bundle".into(),
            reason: "sequences are not in strictly increasing chronological order".into(),
        });
    }
    Ok(())
}
