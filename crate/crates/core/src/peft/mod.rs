//! Low-rank weight adapters (LoRA) and low-rank representation
//! interventions (ReFT) attached to a frozen transformer.

mod lora;
mod ortho;
mod reft;

pub use lora::{lora_delta, lora_forward, lora_scale, LoraAdapter, LoraConfig, Target};
pub use ortho::{orthonormality_error, random_orthonormal, reorthonormalize};
pub use reft::{reft_delta, reft_forward, Position, ReftConfig, ReftIntervention};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelStyle, ParamStore};
use crate::tensor::Scalar;
use crate::tokenizer::TokenizedSequence;

/// Which adaptation method to attach.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum PeftConfig {
    /// Only the classification head trains.
    None,
    Lora(LoraConfig),
    Reft(ReftConfig),
}

impl Default for PeftConfig {
    fn default() -> Self {
        PeftConfig::Reft(ReftConfig::default())
    }
}

impl PeftConfig {
    pub fn method(&self) -> &'static str {
        match self {
            PeftConfig::None => "none",
            PeftConfig::Lora(_) => "lora",
            PeftConfig::Reft(_) => "reft",
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            PeftConfig::None => None,
            PeftConfig::Lora(c) => Some(c.rank),
            PeftConfig::Reft(c) => Some(c.rank),
        }
    }

    /// Same method with a different rank.
    pub fn with_rank(&self, rank: usize) -> PeftConfig {
        match self {
            PeftConfig::None => PeftConfig::None,
            PeftConfig::Lora(c) => PeftConfig::Lora(LoraConfig { rank, ..c.clone() }),
            PeftConfig::Reft(c) => PeftConfig::Reft(ReftConfig { rank, ..c.clone() }),
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let (rank, layers) = match self {
            PeftConfig::None => return Ok(()),
            PeftConfig::Lora(c) => {
                if !(c.alpha > 0.0 && c.alpha.is_finite()) {
                    return Err(Error::config(format!(
                        "lora.alpha must be positive, got {}",
                        c.alpha
                    )));
                }
                if c.targets.is_empty() {
                    return Err(Error::config(
                        "lora.targets must name at least one projection",
                    ));
                }
                (c.rank, &c.layers)
            }
            PeftConfig::Reft(c) => (c.rank, &c.layers),
        };
        let method = self.method();
        if rank == 0 || rank > model.hidden {
            return Err(Error::config(format!(
                "{method}.rank must be in 1..={} (the hidden size), got {rank}",
                model.hidden
            )));
        }
        if let Some(bad) = layers.iter().flatten().find(|&&l| l >= model.layers) {
            return Err(Error::config(format!(
                "{method}.layers names layer {bad} but the model has {}",
                model.layers
            )));
        }
        Ok(())
    }
}

fn layer_set(layers: &Option<Vec<usize>>, l: usize) -> bool {
    layers.as_ref().is_none_or(|s| s.contains(&l))
}

/// Parameter handles created by [`Peft::attach`].
#[derive(Clone, Debug)]
pub enum Peft {
    None,
    Lora {
        /// `adapters[layer][target]`.
        adapters: Vec<[Option<LoraAdapter>; 4]>,
    },
    Reft {
        position: Position,
        interventions: Vec<Option<ReftIntervention>>,
    },
}

impl Peft {
    /// Registers trainable adapter parameters in `store`.
    pub fn attach<F: Scalar>(
        config: &PeftConfig,
        model: &ModelConfig,
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Peft> {
        config.validate(model)?;
        let d = model.hidden;
        Ok(match config {
            PeftConfig::None => Peft::None,
            PeftConfig::Lora(c) => {
                let gamma = lora_scale(c.rank, c.alpha);
                let adapters = (0..model.layers)
                    .map(|l| {
                        let mut slots: [Option<LoraAdapter>; 4] = Default::default();
                        if layer_set(&c.layers, l) {
                            for &t in Target::ALL.iter().filter(|t| c.targets.contains(t)) {
                                slots[t.index()] = Some(LoraAdapter::init(
                                    store,
                                    rng,
                                    &format!("lora.{l}.{}", t.name()),
                                    d,
                                    d,
                                    c.rank,
                                    gamma,
                                ));
                            }
                        }
                        slots
                    })
                    .collect();
                Peft::Lora { adapters }
            }
            PeftConfig::Reft(c) => {
                let interventions = (0..model.layers)
                    .map(|l| {
                        layer_set(&c.layers, l)
                            .then(|| {
                                ReftIntervention::init(store, rng, &format!("reft.{l}"), d, c.rank)
                            })
                            .transpose()
                    })
                    .collect::<Result<_>>()?;
                Peft::Reft {
                    position: c.position.unwrap_or(Position::default_for(model.style)),
                    interventions,
                }
            }
        })
    }

    pub fn lora(&self, layer: usize, target: Target) -> Option<&LoraAdapter> {
        match self {
            Peft::Lora { adapters } => adapters.get(layer).and_then(|a| a[target.index()].as_ref()),
            _ => None,
        }
    }

    pub fn intervention(&self, layer: usize) -> Option<&ReftIntervention> {
        match self {
            Peft::Reft { interventions, .. } => interventions.get(layer).and_then(Option::as_ref),
            _ => None,
        }
    }

    /// Row-local index where interventions apply.
    pub fn reft_position(&self, row: &TokenizedSequence, style: ModelStyle) -> usize {
        let position = match self {
            Peft::Reft { position, .. } => *position,
            _ => Position::default_for(style),
        };
        position.index(row)
    }

    /// Restores the orthonormal-rows constraint on every ReFT projection.
    pub fn after_step<F: Scalar>(&self, store: &mut ParamStore<F>) -> Result<()> {
        if let Peft::Reft { interventions, .. } = self {
            for iv in interventions.iter().flatten() {
                let name = store.param(iv.r).name.clone();
                reorthonormalize(store.get_mut(iv.r))
                    .map_err(|e| Error::numeric(format!("{name}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Trainable scalar counts, with the classification head reported apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub adapter: usize,
    pub head: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.adapter + self.head
    }
}

/// Closed-form trainable parameter count for a method on a model.
pub fn trainable_param_count(model: &ModelConfig, peft: &PeftConfig) -> ParamCount {
    let d = model.hidden;
    let layers =
        |set: &Option<Vec<usize>>| (0..model.layers).filter(|&l| layer_set(set, l)).count();
    let adapter = match peft {
        PeftConfig::None => 0,
        PeftConfig::Lora(c) => layers(&c.layers) * c.targets.len() * 2 * c.rank * d,
        PeftConfig::Reft(c) => layers(&c.layers) * (2 * c.rank * d + c.rank),
    };
    ParamCount {
        adapter,
        head: 2 * d + 2,
    }
}
