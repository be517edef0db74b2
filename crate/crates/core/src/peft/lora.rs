use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Bound, Linear, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

const A_STD: f64 = 0.02;

/// Attention projection an adapter can wrap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Query,
    Key,
    Value,
    Output,
}

impl Target {
    pub const ALL: [Target; 4] = [Target::Query, Target::Key, Target::Value, Target::Output];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Query => "query",
            Target::Key => "key",
            Target::Value => "value",
            Target::Output => "output",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Target>,
    /// `None` adapts every layer.
    pub layers: Option<Vec<usize>>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        LoraConfig {
            rank: 128,
            alpha: 256.0,
            targets: vec![Target::Query, Target::Value],
            layers: None,
        }
    }
}

/// Scale applied to the low-rank update: `alpha / sqrt(rank)`.
pub fn lora_scale(rank: usize, alpha: f64) -> f64 {
    alpha / (rank as f64).sqrt()
}

/// `A` is `rank x in`, `B` is `out x rank`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoraAdapter {
    pub a: ParamId,
    pub b: ParamId,
    pub gamma: f64,
}

impl LoraAdapter {
    /// `A ~ N(0, 0.02)`, `B = 0`, so the adapted layer starts equal to the base.
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        out: usize,
        inp: usize,
        rank: usize,
        gamma: f64,
    ) -> LoraAdapter {
        let a = store.add(
            format!("{name}.A"),
            crate::model::normal(rng, rank, inp, A_STD),
            true,
        );
        let b = store.add(format!("{name}.B"), Tensor::zeros(&[out, rank]), true);
        LoraAdapter { a, b, gamma }
    }
}

/// `gamma * (x A^T) B^T`.
pub fn lora_delta<F: Scalar>(
    tape: &mut Tape<F>,
    b: &Bound,
    x: Var,
    adapter: &LoraAdapter,
) -> Result<Var> {
    let xa = tape.matmul_t(x, b[adapter.a], false, true)?;
    let d = tape.matmul_t(xa, b[adapter.b], false, true)?;
    Ok(tape.scale(d, F::of(adapter.gamma)))
}

/// Base projection plus the adapter's low-rank update, if any.
pub fn lora_forward<F: Scalar>(
    tape: &mut Tape<F>,
    b: &Bound,
    x: Var,
    base: &Linear,
    adapter: Option<&LoraAdapter>,
) -> Result<Var> {
    let y = base.forward(tape, b, x)?;
    match adapter {
        Some(ad) => {
            let d = lora_delta(tape, b, x, ad)?;
            tape.add(y, d)
        }
        None => Ok(y),
    }
}
