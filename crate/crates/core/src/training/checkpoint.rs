use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{predicted_label, LadModel};
use crate::error::{Error, Result};
use crate::logs::{Label, LogSequence};
use crate::model::{ModelConfig, ParamStore};
use crate::peft::PeftConfig;
use crate::tensor::{Precision, Tensor};
use crate::tokenizer::{encode_sequence, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weights file.
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub precision: Precision,
    pub config_hash: String,
    pub vocabulary: String,
    pub model: ModelConfig,
    pub peft: PeftConfig,
    pub tensors: Vec<TensorEntry>,
}

/// A trained 32-bit model plus the vocabulary it expects.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: LadModel<f32>,
    pub vocab: Vocabulary,
    pub config_hash: String,
}

impl Checkpoint {
    /// Writes `manifest.json`, `weights.bin` (little-endian f32 in manifest
    /// order) and `vocab.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut tensors = Vec::with_capacity(self.model.store.len());
        let mut bytes = Vec::new();
        for (_, p) in self.model.store.iter() {
            tensors.push(TensorEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                offset: bytes.len(),
                trainable: p.trainable(),
            });
            for x in p.tensor.data() {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
        let manifest = CheckpointManifest {
            precision: Precision::F32,
            config_hash: self.config_hash.clone(),
            vocabulary: VOCAB_FILE.into(),
            model: self.model.config.clone(),
            peft: self.model.peft_config.clone(),
            tensors,
        };
        fs::write(dir.join(WEIGHTS_FILE), bytes)?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Checkpoint> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingArtifact(manifest_path));
        }
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let weights_path = dir.join(WEIGHTS_FILE);
        if !weights_path.exists() {
            return Err(Error::MissingArtifact(weights_path));
        }
        let bytes = fs::read(&weights_path)?;
        let vocab_name = Path::new(&manifest.vocabulary);
        if vocab_name.components().count() != 1 || vocab_name.file_name().is_none() {
            return Err(Error::Load {
                what: "checkpoint".into(),
                reason: format!(
                    "vocabulary `{}` must be a file name inside the checkpoint",
                    manifest.vocabulary
                ),
            });
        }
        let vocab = Vocabulary::load(&dir.join(vocab_name))?;
        let model = restore(&manifest, &bytes)?;
        if vocab.len() != model.config.vocab_size {
            return Err(Error::Load {
                what: "checkpoint".into(),
                reason: format!(
                    "vocabulary has {} entries but the model expects {}",
                    vocab.len(),
                    model.config.vocab_size
                ),
            });
        }
        Ok(Checkpoint {
            model,
            vocab,
            config_hash: manifest.config_hash,
        })
    }

    /// Label and anomaly score for one sequence.
    pub fn predict(&self, seq: &LogSequence) -> Result<(Label, f64)> {
        let row = encode_sequence(seq, &self.vocab, self.model.config.style)?;
        let score = self.model.scores(&[row])?[0];
        Ok((predicted_label(score), score))
    }
}

/// Decodes weights described by a manifest and rebuilds the model.
pub fn restore(manifest: &CheckpointManifest, bytes: &[u8]) -> Result<LadModel<f32>> {
    let bad = |reason: String| Error::Load {
        what: "checkpoint".into(),
        reason,
    };
    if manifest.precision != Precision::F32 {
        return Err(bad(format!(
            "unsupported precision {}",
            manifest.precision.tag()
        )));
    }
    let mut model = LadModel::<f32>::new(&manifest.model, &manifest.peft)?;
    let mut loaded = ParamStore::new();
    let mut expected_offset = 0usize;
    for e in &manifest.tensors {
        let n: usize = e.shape.iter().product();
        let len = n
            .checked_mul(4)
            .ok_or_else(|| bad(format!("`{}` is too large", e.name)))?;
        if e.offset != expected_offset {
            return Err(bad(format!(
                "`{}` starts at byte {} instead of {expected_offset}",
                e.name, e.offset
            )));
        }
        let chunk = bytes
            .get(e.offset..e.offset + len)
            .ok_or_else(|| bad(format!("weights file ends inside `{}`", e.name)))?;
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let t = Tensor::new(e.shape.clone(), data)
            .map_err(|err| bad(format!("`{}`: {err}", e.name)))?;
        loaded.add(e.name.clone(), t, e.trainable);
        expected_offset += len;
    }
    if expected_offset != bytes.len() {
        return Err(bad(format!(
            "weights file has {} bytes, manifest describes {expected_offset}",
            bytes.len()
        )));
    }
    for ((_, mine), (_, theirs)) in model.store.iter().zip(loaded.iter()) {
        if mine.trainable() != theirs.trainable() {
            return Err(bad(format!(
                "trainability of `{}` differs from the configuration",
                theirs.name
            )));
        }
    }
    model.store.load_values(&loaded)?;
    Ok(model)
}

/// Label and score for `seq` under a loaded checkpoint.
pub fn predict(seq: &LogSequence, checkpoint: &Checkpoint) -> Result<(Label, f64)> {
    checkpoint.predict(seq)
}
