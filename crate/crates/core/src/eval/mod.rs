//! Metrics, experiment protocols, reports and synthetic corpora.

mod inject;
mod lexicon;
mod metrics;
mod protocol;
mod report;
pub mod synthetic;

pub use inject::{
    inject_unstable, pick_action_words, resolve_action_words, Injection, ACTION_WORDS,
    DEFAULT_RATES, DEFAULT_STOPLIST,
};
pub use lexicon::{SynonymLexicon, MAX_SYNONYMS};
pub use metrics::{compute_metrics, Metrics};
pub use protocol::{
    cross_eval, detect, evaluate, inject_protocol, point_seed, run_point, sequences_checksum,
    sweep_rank, sweep_train_ratio, train_seeded, Evaluation, Experiment, DEFAULT_RANKS,
    DEFAULT_RATIOS, INJECT_EPOCHS, RATIO_TEST_SHARE, TRAIN_AXIS,
};
pub use report::{ExperimentReport, ReportRow};
