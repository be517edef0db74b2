//! Classifier head, objective, optimiser loop and checkpoints.

mod adamw;
mod checkpoint;
mod head;
mod model;
mod suite;

pub use adamw::{adamw_step, AdamW, AdamWConfig, Moments};
pub use checkpoint::{
    predict, restore, Checkpoint, CheckpointManifest, TensorEntry, MANIFEST_FILE, VOCAB_FILE,
    WEIGHTS_FILE,
};
pub use head::{anomaly_score, loss, predicted_label, ClassifierHead};
pub use model::LadModel;
pub use suite::{
    check_parameter, gradient_suite, suite_batch, suite_config, SuiteEntry, SUITE_TOLERANCE,
};

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logs::{ClassBalance, Label, LogSequence};
use crate::model::{init_rng, ModelConfig};
use crate::peft::PeftConfig;
use crate::tensor::{Scalar, Tape};
use crate::tokenizer::{build_vocab, encode_sequence, TokenizedSequence, Vocabulary};

const SHUFFLE_STREAM: u64 = 10;
const DROPOUT_STREAM: u64 = 11;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    /// Tokens seen fewer times than this in training text map to UNK.
    pub min_count: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        TrainConfig {
            learning_rate: opt.learning_rate,
            batch_size: 32,
            epochs: 3,
            beta1: opt.beta1,
            beta2: opt.beta2,
            epsilon: opt.epsilon,
            weight_decay: opt.weight_decay,
            min_count: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.min_count == 0 {
            return Err(Error::config(
                "batch_size, epochs and min_count must be at least 1",
            ));
        }
        self.optimizer().validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Forward, backward and optimiser time.
    pub compute_seconds: f64,
    /// Wall time for the whole epoch including batching.
    pub total_seconds: f64,
}

/// A trained model with the vocabulary it was built against.
#[derive(Clone, Debug)]
pub struct TrainOutcome<F> {
    pub model: LadModel<F>,
    pub vocab: Vocabulary,
    pub history: Vec<EpochRecord>,
    /// Digest of the trainable parameters before the first step.
    pub init_checksum: String,
}

/// Encodes sequences, dropping trailing padding.
pub fn encode_all(
    seqs: &[LogSequence],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<TokenizedSequence>> {
    seqs.iter()
        .map(|s| encode_sequence(s, vocab, config.style))
        .collect()
}

/// Builds the vocabulary from `train`, initialises a model and fits it.
pub fn train<F: Scalar>(
    train: &[LogSequence],
    model: &ModelConfig,
    peft: &PeftConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let balance = ClassBalance::of(train);
    if balance.normal == 0 || balance.anomalous == 0 {
        log::warn!(
            "training split has a single class ({} normal, {} anomalous)",
            balance.normal,
            balance.anomalous
        );
    }
    let texts: Vec<String> = train.iter().map(LogSequence::text).collect();
    let vocab = build_vocab(&texts, cfg.min_count, model.max_len)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_len: vocab.max_len(),
        ..model.clone()
    };
    let mut lad = LadModel::new(&config, peft)?;
    let init_checksum = lad.trainable_checksum();
    let rows = encode_all(train, &vocab, &config)?;
    let history = fit(&mut lad, &rows, cfg, |_, _| Ok(()))?;
    Ok(TrainOutcome {
        model: lad,
        vocab,
        history,
        init_checksum,
    })
}

/// Runs `cfg.epochs` passes of shuffled mini-batches over `rows`.
///
/// `after_step` sees the model after every optimiser step together with the
/// global step number (from 1).
pub fn fit<F: Scalar>(
    model: &mut LadModel<F>,
    rows: &[TokenizedSequence],
    cfg: &TrainConfig,
    mut after_step: impl FnMut(&LadModel<F>, u64) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    let mut opt = AdamW::new(cfg.optimizer())?;
    let mut shuffle = init_rng(cfg.seed, SHUFFLE_STREAM);
    let mut drop_rng = init_rng(cfg.seed, DROPOUT_STREAM);
    let use_dropout = model.config.dropout > 0.0;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut compute = Duration::ZERO;
        let mut loss_sum = 0.0;
        order.shuffle(&mut shuffle);
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<TokenizedSequence> = idx.iter().map(|&i| rows[i].trimmed()).collect();
            let labels: Vec<Label> = batch.iter().map(|r| r.label).collect();
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, &[]);
            let dropout = use_dropout.then_some(&mut drop_rng);
            let logits = model.forward_logits(&mut tape, &bound, &batch, dropout)?;
            let l = loss(&mut tape, logits, &labels)?;
            let value = tape.value(l)[0].to_f64().unwrap_or(f64::NAN);
            if !value.is_finite() {
                return Err(Error::numeric(format!("loss is {value} at epoch {epoch}")));
            }
            tape.backward(l)?;
            model.store.zero_grad();
            model.store.collect_grads(&tape, &bound)?;
            drop(tape);
            opt.step(&mut model.store)?;
            model.peft.after_step(&mut model.store)?;
            model.store.zero_grad();
            compute += t0.elapsed();
            loss_sum += value * batch.len() as f64;
            after_step(model, opt.steps())?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / rows.len() as f64,
            compute_seconds: compute.as_secs_f64(),
            total_seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.6} ({:.2}s compute, {:.2}s total)",
            record.mean_loss,
            record.compute_seconds,
            record.total_seconds
        );
        history.push(record);
    }
    Ok(history)
}
