//! Finite-difference checks of every trainable path through a small model.

use serde::Serialize;

use super::{loss, LadModel};
use crate::error::Result;
use crate::logs::Label;
use crate::model::{ModelConfig, ModelStyle, NormPlacement};
use crate::peft::{LoraConfig, PeftConfig, ReftConfig, Target};
use crate::tensor::{grad_check, GradCheck};
use crate::tokenizer::TokenizedSequence;

pub const SUITE_TOLERANCE: f64 = 1e-4;
const STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub group: &'static str,
    pub style: ModelStyle,
    pub parameter: String,
    pub max_relative_error: f64,
    pub analytic: f64,
    pub numeric: f64,
}

impl SuiteEntry {
    pub fn passes(&self) -> bool {
        self.max_relative_error.is_finite() && self.max_relative_error < SUITE_TOLERANCE
    }
}

/// Two layers, width 8, two heads.
pub fn suite_config(style: ModelStyle) -> ModelConfig {
    ModelConfig {
        style,
        layers: 2,
        hidden: 8,
        heads: 2,
        ffn_dim: 16,
        vocab_size: 12,
        max_len: 10,
        seed: 11,
        ..Default::default()
    }
}

/// Three rows of different lengths with both labels.
pub fn suite_batch(style: ModelStyle) -> Vec<TokenizedSequence> {
    let rows: [(&[usize], Label); 3] = [
        (&[3, 4, 5, 6], Label::Normal),
        (&[7, 3, 9], Label::Anomalous),
        (&[11, 10, 4, 4, 8, 1], Label::Normal),
    ];
    rows.iter()
        .map(|(ids, label)| {
            let mut ids = ids.to_vec();
            if style == ModelStyle::Masked {
                ids.insert(0, crate::tokenizer::CLS);
            }
            TokenizedSequence {
                selected: if style == ModelStyle::Masked {
                    0
                } else {
                    ids.len() - 1
                },
                mask: vec![1; ids.len()],
                ids,
                label: *label,
            }
        })
        .collect()
}

/// Loss gradient with respect to the named parameter.
pub fn check_parameter(
    model: &LadModel<f64>,
    name: &str,
    rows: &[TokenizedSequence],
    step: f64,
) -> Result<GradCheck> {
    let id = model
        .store
        .find(name)
        .ok_or_else(|| crate::Error::config(format!("no parameter `{name}`")))?;
    let x = model.store.get(id).clone();
    let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
    grad_check(
        |tape, v| {
            let b = model.store.bind(tape, &[(id, v)]);
            let z = model.forward_logits(tape, &b, rows, None)?;
            loss(tape, z, &labels)
        },
        &x,
        step,
    )
}

fn run(
    out: &mut Vec<SuiteEntry>,
    group: &'static str,
    model: &LadModel<f64>,
    names: &[&str],
    step: f64,
) -> Result<()> {
    let style = model.config.style;
    let rows = suite_batch(style);
    for name in names {
        let r = check_parameter(model, name, &rows, step)?;
        let i = r.worst_index;
        out.push(SuiteEntry {
            group,
            style,
            parameter: name.to_string(),
            max_relative_error: r.max_relative_error,
            analytic: r.analytic.get(i).copied().unwrap_or(f64::NAN),
            numeric: r.numeric.get(i).copied().unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Attention, feed-forward, embeddings, layer norm, LoRA, ReFT and the
/// classifier with its loss, all at 64 bits.
pub fn gradient_suite() -> Result<Vec<SuiteEntry>> {
    use ModelStyle::{Autoregressive, Masked};
    let mut out = Vec::new();
    for style in [Masked, Autoregressive] {
        let m = LadModel::new(&suite_config(style), &PeftConfig::None)?;
        run(
            &mut out,
            "attention",
            &m,
            &[
                "layers.0.attn.query.weight",
                "layers.0.attn.key.weight",
                "layers.0.attn.value.bias",
                "layers.1.attn.value.weight",
                "layers.1.attn.output.weight",
                "layers.1.attn.output.bias",
            ],
            STEP,
        )?;
    }

    let m = LadModel::new(&suite_config(Masked), &PeftConfig::None)?;
    run(
        &mut out,
        "feed-forward",
        &m,
        &[
            "layers.0.ffn.in.weight",
            "layers.0.ffn.in.bias",
            "layers.1.ffn.out.weight",
            "layers.1.ffn.out.bias",
        ],
        STEP,
    )?;
    run(
        &mut out,
        "embeddings",
        &m,
        &["embed.token", "embed.position"],
        STEP,
    )?;
    run(
        &mut out,
        "classifier",
        &m,
        &["head.weight", "head.bias"],
        STEP,
    )?;

    let m = LadModel::new(&suite_config(Autoregressive), &PeftConfig::None)?;
    run(
        &mut out,
        "layer-norm",
        &m,
        &[
            "layers.0.ln1.gamma",
            "layers.0.ln2.beta",
            "layers.1.ln2.gamma",
            "final_norm.gamma",
            "final_norm.beta",
        ],
        STEP,
    )?;

    let mut post = suite_config(Masked);
    post.norm = NormPlacement::Post;
    let mut m = LadModel::new(&post, &PeftConfig::None)?;
    // Tiny embeddings leave post-norm attention gradients near round-off.
    scale(&mut m, "embed.token", 30.0);
    run(
        &mut out,
        "post-norm",
        &m,
        &[
            "layers.0.attn.query.weight",
            "layers.0.attn.value.weight",
            "layers.0.ln1.gamma",
            "layers.1.ffn.in.weight",
            "layers.1.ln2.beta",
        ],
        1e-5,
    )?;

    let lora = PeftConfig::Lora(LoraConfig {
        rank: 3,
        alpha: 6.0,
        targets: Target::ALL.to_vec(),
        layers: None,
    });
    let mut m = LadModel::new(&suite_config(Masked), &lora)?;
    // B starts at zero, which makes dL/dA vanish; move off that point first.
    for l in 0..2 {
        for t in Target::ALL {
            let id = m
                .store
                .find(&format!("lora.{l}.{}.B", t.name()))
                .expect("lora factor");
            let n = m.store.get(id).len();
            m.store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, x)| *x = 0.05 * ((i * 7 % n) as f64 - 1.5));
        }
    }
    run(
        &mut out,
        "lora",
        &m,
        &[
            "lora.0.query.A",
            "lora.0.query.B",
            "lora.0.output.A",
            "lora.1.value.A",
            "lora.1.value.B",
            "lora.1.key.B",
        ],
        STEP,
    )?;

    for style in [Masked, Autoregressive] {
        let reft = PeftConfig::Reft(ReftConfig {
            rank: 3,
            ..Default::default()
        });
        let mut m = LadModel::new(&suite_config(style), &reft)?;
        let w = m.store.find("reft.1.W").expect("reft W");
        m.store.get_mut(w).data_mut()[2] += 0.3;
        run(
            &mut out,
            "reft",
            &m,
            &[
                "reft.0.R", "reft.0.W", "reft.0.b", "reft.1.R", "reft.1.W", "reft.1.b",
            ],
            STEP,
        )?;
    }
    Ok(out)
}

fn scale(m: &mut LadModel<f64>, name: &str, by: f64) {
    let id = m.store.find(name).expect("parameter exists");
    m.store
        .get_mut(id)
        .data_mut()
        .iter_mut()
        .for_each(|x| *x *= by);
}
