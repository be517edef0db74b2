//! Raw log lines to labelled, chronologically split event sequences.

mod bundle;
mod group;
mod parse;

pub use bundle::{parse_jsonl, Bundle, BundleManifest, BUNDLE_MANIFEST};
pub use group::{
    chronological_split, concat_sequence_text, group_sessions, group_sliding, group_windows,
};
pub use parse::{
    mask_token, parse_line, parse_session_labels, read_log, read_log_bytes, ParsedLog, Rejected,
    SessionLabels,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WILDCARD: &str = "<*>";
pub const DEFAULT_WINDOW: usize = 50;

/// Binary label carried by events and sequences. Serialised as 0 / 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Anomalous => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Normal),
            1 => Ok(Label::Anomalous),
            _ => Err(Error::input(format!("label {i} is not 0 or 1"))),
        }
    }

    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).map_err(|e| e.to_string())
    }
}

/// Supported raw log layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    /// Session-keyed (`blk_` ids); labels come from a separate CSV.
    #[serde(rename = "hdfs")]
    Hdfs,
    /// BGL / Spirit / Thunderbird: first field `-` marks a normal line.
    #[serde(rename = "labeled-lines")]
    LabeledLines,
}

impl DatasetFormat {
    pub fn id(self) -> &'static str {
        match self {
            DatasetFormat::Hdfs => "hdfs",
            DatasetFormat::LabeledLines => "labeled-lines",
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DatasetFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hdfs" => Ok(DatasetFormat::Hdfs),
            "labeled-lines" => Ok(DatasetFormat::LabeledLines),
            other => Err(Error::config(format!(
                "unknown dataset format `{other}` (expected `hdfs` or `labeled-lines`)"
            ))),
        }
    }
}

/// How parsed events become sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Grouping {
    Session,
    Window { size: usize, stride: usize },
}

impl Grouping {
    pub fn tumbling(size: usize) -> Self {
        Grouping::Window { size, stride: size }
    }

    pub fn validate(&self) -> Result<()> {
        if let Grouping::Window { size, stride } = *self {
            if size == 0 {
                return Err(Error::config("window size must be at least 1"));
            }
            if stride == 0 || stride > size {
                return Err(Error::config(format!(
                    "window stride must be in 1..={size}, got {stride}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for Grouping {
    fn default() -> Self {
        Grouping::tumbling(DEFAULT_WINDOW)
    }
}

/// One parsed line: the masked template plus bookkeeping.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub template: String,
    /// 1-based line number in the source file.
    pub line: usize,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogSequence {
    pub order_key: usize,
    pub label: Label,
    pub events: Vec<LogEvent>,
}

impl LogSequence {
    /// Builds a sequence labelled anomalous iff any member event is.
    pub fn from_events(events: Vec<LogEvent>) -> Self {
        let label = if events.iter().any(|e| e.label.is_anomalous()) {
            Label::Anomalous
        } else {
            Label::Normal
        };
        let order_key = events.iter().map(|e| e.line).min().unwrap_or(0);
        LogSequence {
            order_key,
            label,
            events,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn text(&self) -> String {
        concat_sequence_text(self)
    }
}

/// Train sequences strictly precede test sequences in file order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub train: Vec<LogSequence>,
    pub test: Vec<LogSequence>,
}

impl LabeledSplit {
    /// Sequences in chronological order.
    pub fn all(&self) -> impl Iterator<Item = &LogSequence> {
        self.train.iter().chain(&self.test)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub normal: usize,
    pub anomalous: usize,
}

impl ClassBalance {
    pub fn of(seqs: &[LogSequence]) -> Self {
        let anomalous = seqs.iter().filter(|s| s.label.is_anomalous()).count();
        ClassBalance {
            normal: seqs.len() - anomalous,
            anomalous,
        }
    }
}
