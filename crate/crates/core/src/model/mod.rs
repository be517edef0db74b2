//! A small post-norm transformer with masked (bidirectional) or
//! autoregressive (causal) self-attention.

mod params;
mod transformer;

pub(crate) use params::hex;
pub use params::{Bound, Linear, Param, ParamId, ParamStore};
pub(crate) use transformer::normal;
pub use transformer::{init_rng, Block, Forward, HiddenStates, Transformer, LN_EPS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelStyle {
    /// Bidirectional attention summarised at a leading CLS token.
    #[default]
    Masked,
    /// Causal attention summarised at the last real token.
    Autoregressive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

/// Where each block applies layer normalisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// `LN(x + f(x))` after each residual sum.
    Post,
    /// `x + f(LN(x))`, with a final normalisation after the last block.
    #[default]
    Pre,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub style: ModelStyle,
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub norm: NormPlacement,
    pub activation: Activation,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            style: ModelStyle::Masked,
            layers: 2,
            hidden: 64,
            heads: 4,
            ffn_dim: 256,
            vocab_size: 3,
            max_len: crate::tokenizer::DEFAULT_MAX_LEN,
            norm: NormPlacement::default(),
            activation: Activation::Gelu,
            dropout: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("model.{name} must be at least 1")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model.hidden ({}) must be divisible by model.heads ({})",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "model.dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}
