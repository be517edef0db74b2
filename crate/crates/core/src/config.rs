//! Run configuration: JSON file plus defaults, with a stable fingerprint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{Experiment, DEFAULT_RANKS, DEFAULT_RATES, DEFAULT_RATIOS, INJECT_EPOCHS};
use crate::logs::{DatasetFormat, Grouping};
use crate::model::{hex, ModelConfig};
use crate::peft::PeftConfig;
use crate::training::TrainConfig;

pub const SEED_ENV: &str = "PEFT_LAD_SEED";
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Raw log file read by `prepare`.
    pub path: Option<PathBuf>,
    pub format: DatasetFormat,
    /// Session label CSV, required for hdfs.
    pub labels: Option<PathBuf>,
    /// Sessions for hdfs and 50-event windows otherwise when absent.
    pub grouping: Option<Grouping>,
    pub train_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: None,
            format: DatasetFormat::LabeledLines,
            labels: None,
            grouping: None,
            train_ratio: DEFAULT_TRAIN_RATIO,
        }
    }
}

impl DatasetConfig {
    pub fn grouping(&self) -> Grouping {
        self.grouping.unwrap_or(match self.format {
            DatasetFormat::Hdfs => Grouping::Session,
            DatasetFormat::LabeledLines => Grouping::default(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ranks: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ranks: DEFAULT_RANKS.to_vec(),
            ratios: DEFAULT_RATIOS.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InjectConfig {
    pub rates: Vec<f64>,
    /// Training epochs for this protocol only.
    pub epochs: usize,
    pub lexicon: Option<PathBuf>,
    /// Used verbatim instead of the frequency pick.
    pub action_words: Option<Vec<String>>,
}

impl Default for InjectConfig {
    fn default() -> Self {
        InjectConfig {
            rates: DEFAULT_RATES.to_vec(),
            epochs: INJECT_EPOCHS,
            lexicon: None,
            action_words: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub peft: PeftConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub inject: InjectConfig,
    /// Master seed; falls back to `PEFT_LAD_SEED`, then 0.
    pub seed: Option<u64>,
    /// Concurrent sweep points.
    pub jobs: Option<usize>,
    /// Root for every artifact.
    pub out: Option<PathBuf>,
}

fn field(name: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(msg) if !msg.starts_with(name) => Error::Config(format!("{name}: {msg}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The explicit seed, else `PEFT_LAD_SEED`, else 0.
    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1)
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            model: self.model.clone(),
            peft: self.peft.clone(),
            train: self.train.clone(),
        }
    }

    /// Checks every section, prefixing messages with the offending section.
    pub fn validate(&self) -> Result<()> {
        self.dataset
            .grouping()
            .validate()
            .map_err(field("dataset.grouping"))?;
        let r = self.dataset.train_ratio;
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::config(format!(
                "dataset.train_ratio: must be in (0, 1), got {r}"
            )));
        }
        self.model.validate().map_err(field("model"))?;
        self.peft.validate(&self.model).map_err(field("peft"))?;
        self.train.validate().map_err(field("train"))?;
        if self.sweep.ranks.is_empty()
            || self.sweep.ranks.windows(2).any(|w| w[0] >= w[1])
            || self.sweep.ranks[0] == 0
        {
            return Err(Error::config(
                "sweep.ranks: must be non-empty, positive and strictly ascending",
            ));
        }
        if self
            .sweep
            .ratios
            .iter()
            .any(|&x| !(x > 0.0 && x <= DEFAULT_TRAIN_RATIO))
        {
            return Err(Error::config(format!(
                "sweep.ratios: every ratio must be in (0, {DEFAULT_TRAIN_RATIO}]"
            )));
        }
        if self.inject.rates.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::config("inject.rates: every rate must be in [0, 1]"));
        }
        if self.inject.epochs == 0 {
            return Err(Error::config("inject.epochs: must be at least 1"));
        }
        if self.jobs == Some(0) {
            return Err(Error::config("jobs: must be at least 1"));
        }
        self.seed()?;
        Ok(())
    }

    /// sha256 over the JSON form with the seed resolved and the output
    /// directory left out.
    pub fn fingerprint(&self) -> Result<String> {
        let mut c = self.clone();
        c.seed = Some(self.seed()?);
        c.out = None;
        let json = serde_json::to_vec(&c)?;
        Ok(hex(&Sha256::digest(json)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_fill_defaults() {
        let c = RunConfig::from_json(
            r#"{"train": {"epochs": 5}, "peft": {"method": "lora", "rank": 8}, "seed": 3}"#,
        )
        .unwrap();
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.learning_rate, 1e-4);
        assert_eq!(c.peft.rank(), Some(8));
        assert_eq!(c.seed().unwrap(), 3);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_field_rejected() {
        let err = RunConfig::from_json(r#"{"trian": {}}"#).unwrap_err();
        assert!(err.to_string().contains("trian"));
    }

    #[test]
    fn field_level_messages() {
        let mut c = RunConfig::default();
        c.train.batch_size = 0;
        assert!(c.validate().unwrap_err().to_string().contains("train:"));
        let mut c = RunConfig::default();
        c.model.heads = 5;
        assert!(c.validate().unwrap_err().to_string().contains("model."));
        let mut c = RunConfig::default();
        c.sweep.ratios = vec![0.9];
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("sweep.ratios"));
    }

    #[test]
    fn fingerprint_ignores_out_dir() {
        let a = RunConfig {
            seed: Some(1),
            ..Default::default()
        };
        let b = RunConfig {
            out: Some("elsewhere".into()),
            ..a.clone()
        };
        assert_eq!(a.fingerprint().unwrap(), b.fingerprint().unwrap());
        let c = RunConfig {
            seed: Some(2),
            ..a.clone()
        };
        assert_ne!(a.fingerprint().unwrap(), c.fingerprint().unwrap());
        assert_eq!(a.fingerprint().unwrap().len(), 64);
    }

    #[test]
    fn hdfs_defaults_to_sessions() {
        let d = DatasetConfig {
            format: DatasetFormat::Hdfs,
            ..Default::default()
        };
        assert_eq!(d.grouping(), Grouping::Session);
        assert_eq!(DatasetConfig::default().grouping(), Grouping::tumbling(50));
    }
}
