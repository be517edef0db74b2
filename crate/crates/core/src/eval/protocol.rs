use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{ExperimentReport, ReportRow};
use super::{compute_metrics, inject_unstable, Metrics, SynonymLexicon};
use crate::error::{Error, Result};
use crate::logs::{chronological_split, Label, LabeledSplit, LogSequence};
use crate::model::{hex, ModelConfig};
use crate::peft::PeftConfig;
use crate::tensor::Scalar;
use crate::tokenizer::Vocabulary;
use crate::training::{encode_all, predicted_label, train, LadModel, TrainConfig, TrainOutcome};

pub const DEFAULT_RANKS: [usize; 8] = [1, 2, 4, 8, 16, 32, 64, 128];
pub const DEFAULT_RATIOS: [f64; 8] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
/// Share of the sequences always held out by the ratio sweep.
pub const RATIO_TEST_SHARE: f64 = 0.2;
pub const INJECT_EPOCHS: usize = 1;
/// Axis label whose derived seed drives single training runs.
pub const TRAIN_AXIS: &str = "train";

/// Everything that shapes one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Experiment {
    pub model: ModelConfig,
    pub peft: PeftConfig,
    pub train: TrainConfig,
}

impl Experiment {
    /// The same settings with both model and training seeds set to `seed`.
    pub fn seeded(&self, seed: u64) -> Experiment {
        let mut e = self.clone();
        e.model.seed = seed;
        e.train.seed = seed;
        e
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.peft.validate(&self.model)?;
        self.train.validate()
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("experiment serialises");
        hex(&Sha256::digest(json))
    }
}

/// Seed for one axis point: the first 8 bytes of sha256(master LE ‖ axis).
pub fn point_seed(master: u64, axis: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(axis.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 8 bytes"))
}

/// Digest of a sequence list in its JSON form.
pub fn sequences_checksum(seqs: &[LogSequence]) -> String {
    let mut h = Sha256::new();
    for s in seqs {
        h.update(serde_json::to_vec(s).expect("sequence serialises"));
        h.update(b"\n");
    }
    hex(&h.finalize())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub scores: Vec<f64>,
    pub predictions: Vec<Label>,
}

impl Evaluation {
    /// All predictions fell in one class.
    pub fn degenerate(&self) -> bool {
        self.predictions.windows(2).all(|w| w[0] == w[1])
    }
}

pub fn evaluate<F: Scalar>(
    model: &LadModel<F>,
    vocab: &Vocabulary,
    test: &[LogSequence],
) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::config("test split is empty"));
    }
    let rows = encode_all(test, vocab, &model.config)?;
    let scores = model.scores(&rows)?;
    let predictions: Vec<Label> = scores.iter().map(|&s| predicted_label(s)).collect();
    let labels: Vec<Label> = test.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        metrics: compute_metrics(&predictions, &labels)?,
        scores,
        predictions,
    })
}

fn mean_epoch_seconds<F>(out: &TrainOutcome<F>) -> f64 {
    out.history.iter().map(|r| r.compute_seconds).sum::<f64>() / out.history.len().max(1) as f64
}

/// A 32-bit training run with model and training seeds set to `seed`.
pub fn train_seeded(
    train_seqs: &[LogSequence],
    exp: &Experiment,
    seed: u64,
) -> Result<TrainOutcome<f32>> {
    let exp = exp.seeded(seed);
    exp.validate()?;
    train::<f32>(train_seqs, &exp.model, &exp.peft, &exp.train)
}

fn row_from(axis: &str, seed: u64, out: &TrainOutcome<f32>, eval: &Evaluation) -> ReportRow {
    ReportRow {
        metrics: Some(eval.metrics),
        epoch_seconds: Some(mean_epoch_seconds(out)),
        init_checksum: Some(out.init_checksum.clone()),
        degenerate: eval.degenerate(),
        ..ReportRow::new(axis, seed)
    }
}

/// Trains on `train_seqs` with the seed derived from `axis` and scores `test`.
/// Failures land in the row.
pub fn run_point(
    train_seqs: &[LogSequence],
    test: &[LogSequence],
    exp: &Experiment,
    master: u64,
    axis: &str,
) -> ReportRow {
    let seed = point_seed(master, axis);
    let result = train_seeded(train_seqs, exp, seed).and_then(|out| {
        let eval = evaluate(&out.model, &out.vocab, test)?;
        Ok(row_from(axis, seed, &out, &eval))
    });
    result.unwrap_or_else(|e| {
        log::warn!("point {axis} failed: {e}");
        ReportRow::failed(axis, seed, e.to_string())
    })
}

/// Runs `f` over `points` on at most `jobs` threads; rows come back in
/// point order.
fn run_points<T: Sync>(
    points: &[T],
    jobs: usize,
    f: impl Fn(&T) -> ReportRow + Sync,
) -> Vec<ReportRow> {
    let jobs = jobs.clamp(1, points.len().max(1));
    if jobs == 1 {
        return points.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<ReportRow>>> = points.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(p) = points.get(i) else { break };
                let row = f(p);
                *slots[i].lock().expect("slot lock") = Some(row);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every point ran"))
        .collect()
}

fn report(protocol: &str, exp: &Experiment, master: u64, rows: Vec<ReportRow>) -> ExperimentReport {
    ExperimentReport {
        protocol: protocol.into(),
        fingerprint: exp.fingerprint(),
        seed: master,
        test_checksum: None,
        rows,
    }
}

/// Train on the split's training part, score its test part.
pub fn detect(
    split: &LabeledSplit,
    exp: &Experiment,
    master: u64,
) -> Result<(ExperimentReport, TrainOutcome<f32>)> {
    let seed = point_seed(master, TRAIN_AXIS);
    let out = train_seeded(&split.train, exp, seed)?;
    let eval = evaluate(&out.model, &out.vocab, &split.test)?;
    let row = row_from("in-domain", seed, &out, &eval);
    let mut r = report("eval", exp, master, vec![row]);
    r.test_checksum = Some(sequences_checksum(&split.test));
    Ok((r, out))
}

/// One full run per rank. Ranks must be strictly ascending.
pub fn sweep_rank(
    split: &LabeledSplit,
    exp: &Experiment,
    ranks: &[usize],
    master: u64,
    jobs: usize,
) -> Result<ExperimentReport> {
    if ranks.is_empty() || ranks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!(
            "ranks must be non-empty and strictly ascending, got {ranks:?}"
        )));
    }
    if exp.peft.rank().is_none() {
        return Err(Error::config("rank sweep needs a lora or reft method"));
    }
    let rows = run_points(ranks, jobs, |&r| {
        let point = Experiment {
            peft: exp.peft.with_rank(r),
            ..exp.clone()
        };
        run_point(&split.train, &split.test, &point, master, &r.to_string())
    });
    let mut r = report("sweep-rank", exp, master, rows);
    r.test_checksum = Some(sequences_checksum(&split.test));
    Ok(r)
}

/// The last 20% of `seqs` is the fixed test set; each ratio trains on that
/// share of `seqs` taken from the front.
pub fn sweep_train_ratio(
    seqs: &[LogSequence],
    exp: &Experiment,
    ratios: &[f64],
    master: u64,
    jobs: usize,
) -> Result<ExperimentReport> {
    if ratios.is_empty() {
        return Err(Error::config("no training ratios given"));
    }
    let limit = 1.0 - RATIO_TEST_SHARE;
    if let Some(r) = ratios.iter().find(|&&r| !(r > 0.0 && r <= limit + 1e-12)) {
        return Err(Error::config(format!(
            "training ratio {r} outside (0, {limit}] would overlap the test set"
        )));
    }
    let split = chronological_split(seqs.to_vec(), limit)?;
    let n = seqs.len();
    let rows = run_points(ratios, jobs, |&ratio| {
        let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).min(split.train.len());
        run_point(
            &split.train[..n_train],
            &split.test,
            exp,
            master,
            &ratio.to_string(),
        )
    });
    let mut r = report("sweep-data", exp, master, rows);
    r.test_checksum = Some(sequences_checksum(&split.test));
    Ok(r)
}

/// Trains once, then scores the clean test set (axis `0`) and one perturbed
/// copy per rate.
#[allow(clippy::too_many_arguments)]
pub fn inject_protocol(
    split: &LabeledSplit,
    exp: &Experiment,
    lexicon: &SynonymLexicon,
    action_words: &[String],
    rates: &[f64],
    master: u64,
    jobs: usize,
) -> Result<ExperimentReport> {
    let train_seed = point_seed(master, TRAIN_AXIS);
    let out = train_seeded(&split.train, exp, train_seed)?;
    let clean = evaluate(&out.model, &out.vocab, &split.test)?;
    let base_f1 = clean.metrics.f1;
    let mut rows = vec![row_from("0", train_seed, &out, &clean)];
    rows.extend(run_points(rates, jobs, |&rate| {
        let axis = rate.to_string();
        let seed = point_seed(master, &axis);
        let result =
            inject_unstable(&split.test, lexicon, action_words, rate, seed).and_then(|inj| {
                let eval = evaluate(&out.model, &out.vocab, &inj.sequences)?;
                let change = eval.metrics.f1 - base_f1;
                Ok(ReportRow {
                    seed,
                    f1_change: Some(change),
                    f1_change_relative: (base_f1 != 0.0).then(|| change / base_f1),
                    ..row_from(&axis, seed, &out, &eval)
                })
            });
        result.unwrap_or_else(|e| ReportRow::failed(&axis, seed, e.to_string()))
    }));
    let mut r = report("inject", exp, master, rows);
    r.test_checksum = Some(sequences_checksum(&split.test));
    Ok(r)
}

/// Trains once on `train_seqs` and scores every named test set with the
/// training vocabulary.
pub fn cross_eval(
    train_seqs: &[LogSequence],
    tests: &[(String, Vec<LogSequence>)],
    exp: &Experiment,
    master: u64,
) -> Result<ExperimentReport> {
    let seed = point_seed(master, TRAIN_AXIS);
    let out = train_seeded(train_seqs, exp, seed)?;
    let mut rows = Vec::with_capacity(tests.len());
    for (name, test) in tests {
        let eval = evaluate(&out.model, &out.vocab, test)?;
        if eval.degenerate() {
            log::warn!("{name}: every prediction is {:?}", eval.predictions[0]);
        }
        rows.push(row_from(name, seed, &out, &eval));
    }
    Ok(report("cross", exp, master, rows))
}
