//! Parameter-efficient fine-tuning of small transformers for log anomaly
//! detection.
//!
//! The crate covers the whole path from raw log lines to an evaluated
//! classifier: template masking and sequence grouping ([`logs`]), a
//! word-level [`tokenizer`], a small masked or causal transformer
//! ([`model`]) trained through a reverse-mode [`tensor`] tape, the LoRA and
//! ReFT adapters ([`peft`]), the optimisation loop and checkpoints
//! ([`training`]), and the experiment protocols ([`eval`]).

pub mod config;
pub mod error;
pub mod eval;
pub mod logs;
pub mod model;
pub mod peft;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
