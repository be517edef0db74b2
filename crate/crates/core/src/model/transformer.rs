use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{
    Activation, Bound, Linear, ModelConfig, ModelStyle, NormPlacement, ParamId, ParamStore,
};
use crate::error::{Error, Result};
use crate::peft::{lora_forward, reft_delta, Peft, Target};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::TokenizedSequence;

pub const LN_EPS: f64 = 1e-5;
const EMBED_STD: f64 = 0.02;

/// Deterministic generator for a named parameter group.
pub fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform<F: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<F> {
    let bound = 1.0 / (cols as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(&[rows, cols], |_| F::of(dist.sample(rng)))
}

pub(crate) fn normal<F: Scalar>(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    std: f64,
) -> Tensor<F> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Tensor::from_fn(&[rows, cols], |_| F::of(dist.sample(rng)))
}

fn linear<F: Scalar>(
    store: &mut ParamStore<F>,
    rng: &mut ChaCha8Rng,
    name: &str,
    out: usize,
    inp: usize,
) -> Linear {
    let weight = store.add(format!("{name}.weight"), uniform(rng, out, inp), false);
    let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out]), false);
    Linear { weight, bias }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln1: (ParamId, ParamId),
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln2: (ParamId, ParamId),
}

impl Block {
    pub fn projection(&self, target: Target) -> &Linear {
        match target {
            Target::Query => &self.query,
            Target::Key => &self.key,
            Target::Value => &self.value,
            Target::Output => &self.output,
        }
    }
}

/// Embeddings plus `layers` frozen blocks. All base parameters are
/// registered as non-trainable.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: ModelConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub blocks: Vec<Block>,
    /// Final normalisation, present with pre-norm blocks.
    pub final_norm: Option<(ParamId, ParamId)>,
}

/// `h^(0)` (embeddings) through `h^(m)` for every position of a stacked batch.
#[derive(Clone, Debug)]
pub struct HiddenStates<F> {
    pub layers: Vec<Tensor<F>>,
}

/// Per-row layout of a batch stacked along the row axis.
pub(crate) struct Layout {
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
    /// Attention permission per row, `len x len`.
    pub masks: Vec<Vec<bool>>,
}

/// Tape values of one forward pass.
pub struct Forward {
    /// `h^(0..=m)`, each `total_positions x hidden`.
    pub hidden: Vec<Var>,
    /// Stacked row index of each sequence's selected position.
    pub selected: Vec<usize>,
}

impl Transformer {
    pub fn init<F: Scalar>(config: &ModelConfig, store: &mut ParamStore<F>) -> Result<Transformer> {
        config.validate()?;
        let d = config.hidden;
        let mut rng = init_rng(config.seed, 0);
        let token_embedding = store.add(
            "embed.token",
            normal(&mut rng, config.vocab_size, d, EMBED_STD),
            false,
        );
        let position_embedding = store.add(
            "embed.position",
            normal(&mut rng, config.max_len, d, EMBED_STD),
            false,
        );
        let ones = || Tensor::from_fn(&[d], |_| F::one());
        let blocks = (0..config.layers)
            .map(|l| {
                let p = format!("layers.{l}");
                Block {
                    query: linear(store, &mut rng, &format!("{p}.attn.query"), d, d),
                    key: linear(store, &mut rng, &format!("{p}.attn.key"), d, d),
                    value: linear(store, &mut rng, &format!("{p}.attn.value"), d, d),
                    output: linear(store, &mut rng, &format!("{p}.attn.output"), d, d),
                    ln1: (
                        store.add(format!("{p}.ln1.gamma"), ones(), false),
                        store.add(format!("{p}.ln1.beta"), Tensor::zeros(&[d]), false),
                    ),
                    ffn_in: linear(store, &mut rng, &format!("{p}.ffn.in"), config.ffn_dim, d),
                    ffn_out: linear(store, &mut rng, &format!("{p}.ffn.out"), d, config.ffn_dim),
                    ln2: (
                        store.add(format!("{p}.ln2.gamma"), ones(), false),
                        store.add(format!("{p}.ln2.beta"), Tensor::zeros(&[d]), false),
                    ),
                }
            })
            .collect();
        let final_norm = (config.norm == NormPlacement::Pre).then(|| {
            (
                store.add("final_norm.gamma", ones(), false),
                store.add("final_norm.beta", Tensor::zeros(&[d]), false),
            )
        });
        Ok(Transformer {
            config: config.clone(),
            token_embedding,
            position_embedding,
            blocks,
            final_norm,
        })
    }

    pub(crate) fn layout(&self, rows: &[TokenizedSequence]) -> Result<Layout> {
        if rows.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let mut offsets = Vec::with_capacity(rows.len());
        let mut lens = Vec::with_capacity(rows.len());
        let mut masks = Vec::with_capacity(rows.len());
        let mut off = 0;
        for (i, r) in rows.iter().enumerate() {
            let n = r.ids.len();
            if n == 0 || n > self.config.max_len {
                return Err(Error::input(format!(
                    "row {i} has {n} positions; expected 1..={}",
                    self.config.max_len
                )));
            }
            if r.mask.len() != n || r.mask.iter().any(|&m| m > 1) {
                return Err(Error::input(format!(
                    "row {i} has a malformed attention mask"
                )));
            }
            if r.mask[0] != 1 || r.selected >= n || r.mask[r.selected] != 1 {
                return Err(Error::input(format!(
                    "row {i} must start with a real token and select a real position"
                )));
            }
            let causal = self.config.style == ModelStyle::Autoregressive;
            let mask = (0..n * n)
                .map(|k| {
                    let (q, key) = (k / n, k % n);
                    r.mask[key] == 1 && (!causal || key <= q)
                })
                .collect();
            offsets.push(off);
            lens.push(n);
            masks.push(mask);
            off += n;
        }
        Ok(Layout {
            offsets,
            lens,
            masks,
        })
    }

    /// Runs every row of `rows` and returns all hidden states.
    ///
    /// With `dropout` set, activations after attention and after the FFN are
    /// dropped at the configured rate using that generator.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Bound,
        rows: &[TokenizedSequence],
        peft: &Peft,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        let layout = self.layout(rows)?;
        let ids: Vec<usize> = rows.iter().flat_map(|r| r.ids.iter().copied()).collect();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::input(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let positions: Vec<usize> = layout.lens.iter().flat_map(|&n| 0..n).collect();
        let tok = tape.gather(b[self.token_embedding], &ids)?;
        let pos = tape.gather(b[self.position_embedding], &positions)?;
        let mut x = tape.add(tok, pos)?;

        let site: Vec<usize> = rows
            .iter()
            .zip(&layout.offsets)
            .map(|(r, &o)| o + peft.reft_position(r, self.config.style))
            .collect();
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        for (l, block) in self.blocks.iter().enumerate() {
            if let Some(iv) = peft.intervention(l) {
                let h = tape.gather(x, &site)?;
                let delta = reft_delta(tape, b, h, iv)?;
                x = tape.add_to_rows(x, &site, delta)?;
            }
            hidden.push(x);
            x = self.block(tape, b, l, block, x, &layout, peft, dropout.as_deref_mut())?;
        }
        if let Some((g, beta)) = self.final_norm {
            x = tape.layer_norm(x, b[g], b[beta], F::of(LN_EPS))?;
        }
        hidden.push(x);
        let selected = rows
            .iter()
            .zip(&layout.offsets)
            .map(|(r, &o)| o + r.selected)
            .collect();
        Ok(Forward { hidden, selected })
    }

    /// Attention context (before the output projection) for every position.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn attention_context<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Bound,
        layer: usize,
        block: &Block,
        x: Var,
        layout: &Layout,
        peft: &Peft,
    ) -> Result<Var> {
        let q = lora_forward(tape, b, x, &block.query, peft.lora(layer, Target::Query))?;
        let k = lora_forward(tape, b, x, &block.key, peft.lora(layer, Target::Key))?;
        let v = lora_forward(tape, b, x, &block.value, peft.lora(layer, Target::Value))?;
        let dh = self.config.head_dim();
        let scale = F::of(1.0 / (dh as f64).sqrt());
        let mut ctx_rows = Vec::with_capacity(layout.lens.len());
        for ((&off, &n), mask) in layout.offsets.iter().zip(&layout.lens).zip(&layout.masks) {
            let (qr, kr, vr) = if layout.lens.len() == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_rows(q, off, n)?,
                    tape.slice_rows(k, off, n)?,
                    tape.slice_rows(v, off, n)?,
                )
            };
            let mut heads = Vec::with_capacity(self.config.heads);
            for h in 0..self.config.heads {
                let (qh, kh, vh) = if self.config.heads == 1 {
                    (qr, kr, vr)
                } else {
                    (
                        tape.slice_cols(qr, h * dh, dh)?,
                        tape.slice_cols(kr, h * dh, dh)?,
                        tape.slice_cols(vr, h * dh, dh)?,
                    )
                };
                let s = tape.matmul_t(qh, kh, false, true)?;
                let s = tape.scale(s, scale);
                let p = tape.softmax_rows(s, Some(mask))?;
                heads.push(tape.matmul(p, vh)?);
            }
            ctx_rows.push(if heads.len() == 1 {
                heads[0]
            } else {
                tape.concat_cols(&heads)?
            });
        }
        if ctx_rows.len() == 1 {
            Ok(ctx_rows[0])
        } else {
            tape.concat_rows(&ctx_rows)
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        b: &Bound,
        layer: usize,
        block: &Block,
        x: Var,
        layout: &Layout,
        peft: &Peft,
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let eps = F::of(LN_EPS);
        let pre = self.config.norm == NormPlacement::Pre;
        let attn_in = if pre {
            tape.layer_norm(x, b[block.ln1.0], b[block.ln1.1], eps)?
        } else {
            x
        };
        let ctx = self.attention_context(tape, b, layer, block, attn_in, layout, peft)?;
        let a = lora_forward(
            tape,
            b,
            ctx,
            &block.output,
            peft.lora(layer, Target::Output),
        )?;
        let a = self.dropout(tape, a, dropout.as_deref_mut())?;
        let mut x = tape.add(x, a)?;
        if !pre {
            x = tape.layer_norm(x, b[block.ln1.0], b[block.ln1.1], eps)?;
        }
        let ffn_in = if pre {
            tape.layer_norm(x, b[block.ln2.0], b[block.ln2.1], eps)?
        } else {
            x
        };
        let f = block.ffn_in.forward(tape, b, ffn_in)?;
        let f = match self.config.activation {
            Activation::Gelu => tape.gelu(f),
            Activation::Relu => tape.relu(f),
        };
        let f = block.ffn_out.forward(tape, b, f)?;
        let f = self.dropout(tape, f, dropout)?;
        let x = tape.add(x, f)?;
        if pre {
            Ok(x)
        } else {
            tape.layer_norm(x, b[block.ln2.0], b[block.ln2.1], eps)
        }
    }

    fn dropout<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        a: Var,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng.filter(|_| p > 0.0) else {
            return Ok(a);
        };
        let (r, c) = tape.dims(a);
        let keep = F::of(1.0 / (1.0 - p));
        let mask = (0..r * c)
            .map(|_| {
                if rng.random::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let m = tape.constant(r, c, mask)?;
        tape.mul(a, m)
    }

    /// Hidden states for a batch, evaluated without gradients.
    pub fn hidden_states<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        rows: &[TokenizedSequence],
        peft: &Peft,
    ) -> Result<HiddenStates<F>> {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, &[]);
        let fwd = self.forward(&mut tape, &b, rows, peft, None)?;
        Ok(HiddenStates {
            layers: fwd.hidden.iter().map(|&h| tape.to_tensor(h)).collect(),
        })
    }
}
