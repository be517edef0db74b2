use nalgebra::DMatrix;
use peft_lad::logs::{Label, LogEvent, LogSequence};
use peft_lad::model::init_rng;
use peft_lad::model::{ModelConfig, ModelStyle, NormPlacement, ParamStore, Transformer};
use peft_lad::peft::{
    orthonormality_error, random_orthonormal, reft_delta, trainable_param_count, LoraConfig, Peft,
    PeftConfig, Position, ReftConfig, ReftIntervention, Target,
};
use peft_lad::tensor::{Tape, Tensor};
use peft_lad::tokenizer::{build_vocab, TokenizedSequence, CLS};
use peft_lad::training::{encode_all, fit, loss, LadModel, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

const VOCAB: usize = 20;
const MAX_LEN: usize = 16;

fn config(style: ModelStyle, norm: NormPlacement) -> ModelConfig {
    ModelConfig {
        style,
        norm,
        layers: 2,
        hidden: 16,
        heads: 4,
        ffn_dim: 32,
        vocab_size: VOCAB,
        max_len: MAX_LEN,
        seed: 7,
        ..Default::default()
    }
}

fn transformer(cfg: &ModelConfig) -> (Transformer, ParamStore<f32>) {
    let mut store = ParamStore::new();
    let t = Transformer::init(cfg, &mut store).unwrap();
    (t, store)
}

fn row(tokens: &[usize], style: ModelStyle) -> TokenizedSequence {
    let mut ids = Vec::with_capacity(tokens.len() + 1);
    if style == ModelStyle::Masked {
        ids.push(CLS);
    }
    ids.extend_from_slice(tokens);
    let selected = match style {
        ModelStyle::Masked => 0,
        ModelStyle::Autoregressive => ids.len() - 1,
    };
    TokenizedSequence {
        mask: vec![1; ids.len()],
        ids,
        selected,
        label: Label::Normal,
    }
}

fn style() -> impl Strategy<Value = ModelStyle> {
    prop_oneof![Just(ModelStyle::Masked), Just(ModelStyle::Autoregressive)]
}

fn norm() -> impl Strategy<Value = NormPlacement> {
    prop_oneof![Just(NormPlacement::Pre), Just(NormPlacement::Post)]
}

fn tokens(max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..VOCAB, 1..=max)
}

fn rows_of(hidden: &Tensor<f32>, d: usize, from: usize, n: usize) -> &[f32] {
    &hidden.data()[from * d..(from + n) * d]
}

fn corpus(n: usize) -> Vec<LogSequence> {
    (0..n)
        .map(|i| {
            let text = if i % 5 == 0 {
                "disk fault detected halt node"
            } else if i % 2 == 0 {
                "job started ok node"
            } else {
                "job finished ok"
            };
            LogSequence::from_events(vec![LogEvent {
                template: text.into(),
                line: i + 1,
                label: if i % 5 == 0 {
                    Label::Anomalous
                } else {
                    Label::Normal
                },
                session: None,
            }])
        })
        .collect()
}

/// Model sized to `corpus` with its encoded rows.
fn corpus_model(peft: &PeftConfig, style: ModelStyle) -> (LadModel<f32>, Vec<TokenizedSequence>) {
    let seqs = corpus(40);
    let texts: Vec<String> = seqs.iter().map(LogSequence::text).collect();
    let vocab = build_vocab(&texts, 1, MAX_LEN).unwrap();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..config(style, NormPlacement::Pre)
    };
    let model = LadModel::new(&cfg, peft).unwrap();
    let rows = encode_all(&seqs, &vocab, &cfg).unwrap();
    (model, rows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn appending_pad_never_changes_real_positions(
        style in style(),
        norm in norm(),
        toks in tokens(10),
        pads in 1usize..5,
    ) {
        let cfg = config(style, norm);
        let (t, store) = transformer(&cfg);
        let plain = row(&toks, style);
        let mut padded = plain.clone();
        padded.pad_to(plain.len() + pads);
        let a = t.hidden_states(&store, std::slice::from_ref(&plain), &Peft::None).unwrap();
        let b = t.hidden_states(&store, &[padded], &Peft::None).unwrap();
        let n = plain.len();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            prop_assert_eq!(rows_of(x, 16, 0, n), rows_of(y, 16, 0, n));
        }
    }

    #[test]
    fn causal_prefix_independence(
        norm in norm(),
        toks in tokens(12),
        pick in any::<prop::sample::Index>(),
        replacement in 1usize..VOCAB,
    ) {
        let cfg = config(ModelStyle::Autoregressive, norm);
        let (t, store) = transformer(&cfg);
        let j = pick.index(toks.len());
        let mut changed = toks.clone();
        changed[j] = replacement;
        let a = t.hidden_states(&store, &[row(&toks, ModelStyle::Autoregressive)], &Peft::None).unwrap();
        let b = t.hidden_states(&store, &[row(&changed, ModelStyle::Autoregressive)], &Peft::None).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            prop_assert_eq!(rows_of(x, 16, 0, j), rows_of(y, 16, 0, j));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_summary_sees_every_token(
        toks in tokens(10),
        pick in any::<prop::sample::Index>(),
        shift in 1usize..VOCAB - 1,
    ) {
        let cfg = config(ModelStyle::Masked, NormPlacement::Pre);
        let (t, store) = transformer(&cfg);
        let j = pick.index(toks.len());
        let mut changed = toks.clone();
        changed[j] = 1 + (toks[j] - 1 + shift) % (VOCAB - 1);
        let a = t.hidden_states(&store, &[row(&toks, ModelStyle::Masked)], &Peft::None).unwrap();
        let b = t.hidden_states(&store, &[row(&changed, ModelStyle::Masked)], &Peft::None).unwrap();
        let (x, y) = (a.layers.last().unwrap(), b.layers.last().unwrap());
        prop_assert_ne!(rows_of(x, 16, 0, 1), rows_of(y, 16, 0, 1));
    }

    #[test]
    fn param_count_matches_registered_parameters(
        layers in 1usize..4,
        heads in 1usize..4,
        rank in 1usize..8,
        adapted in prop::collection::vec(any::<bool>(), 3),
        targets in prop::sample::subsequence(Target::ALL.to_vec(), 1..=4),
        reft in any::<bool>(),
    ) {
        let model = ModelConfig {
            layers,
            hidden: 8 * heads,
            heads,
            ffn_dim: 16,
            vocab_size: VOCAB,
            max_len: MAX_LEN,
            ..Default::default()
        };
        let mut chosen: Vec<usize> = (0..layers).filter(|&l| adapted[l]).collect();
        if chosen.is_empty() {
            chosen.push(0);
        }
        let peft = if reft {
            PeftConfig::Reft(ReftConfig { rank, position: None, layers: Some(chosen.clone()) })
        } else {
            PeftConfig::Lora(LoraConfig { rank, alpha: 2.0, targets: targets.clone(), layers: Some(chosen.clone()) })
        };
        let m = LadModel::<f32>::new(&model, &peft).unwrap();
        let count = trainable_param_count(&model, &peft);
        prop_assert_eq!(m.store.trainable_count(), count.total());
        let d = model.hidden;
        let formula = if reft {
            chosen.len() * (2 * rank * d + rank)
        } else {
            chosen.len() * targets.len() * 2 * rank * d
        };
        prop_assert_eq!(count.adapter, formula);
        prop_assert_eq!(count.head, 2 * d + 2);
    }
}

#[test]
fn lora_with_zero_b_matches_frozen_base() {
    let cfg = config(ModelStyle::Masked, NormPlacement::Pre);
    let lora = PeftConfig::Lora(LoraConfig {
        rank: 4,
        alpha: 8.0,
        targets: Target::ALL.to_vec(),
        layers: None,
    });
    let base = LadModel::<f32>::new(&cfg, &PeftConfig::None).unwrap();
    let adapted = LadModel::<f32>::new(&cfg, &lora).unwrap();
    let mut rng = init_rng(3, 99);
    let probe: Vec<TokenizedSequence> = (0..64)
        .map(|_| {
            let n = rng.random_range(1..MAX_LEN);
            let toks: Vec<usize> = (0..n).map(|_| rng.random_range(1..VOCAB)).collect();
            row(&toks, ModelStyle::Masked)
        })
        .collect();
    let a = base.logits(&probe).unwrap();
    let b = adapted.logits(&probe).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

#[test]
fn reft_at_init_reproduces_base_hidden_states() {
    for style in [ModelStyle::Masked, ModelStyle::Autoregressive] {
        let cfg = config(style, NormPlacement::Pre);
        let reft = PeftConfig::Reft(ReftConfig {
            rank: 4,
            ..Default::default()
        });
        let base = LadModel::<f32>::new(&cfg, &PeftConfig::None).unwrap();
        let adapted = LadModel::<f32>::new(&cfg, &reft).unwrap();
        let rows = vec![row(&[3, 4, 5, 6, 7], style), row(&[8, 1], style)];
        let a = base.hidden_states(&rows).unwrap();
        let b = adapted.hidden_states(&rows).unwrap();
        for (x, y) in a.layers.iter().zip(&b.layers) {
            for (p, q) in x.data().iter().zip(y.data()) {
                assert!((p - q).abs() <= 1e-6);
            }
        }
    }
}

#[test]
fn full_rank_reft_is_an_affine_map() {
    let d = 6;
    let mut rng = init_rng(4, 1);
    let mut store = ParamStore::<f64>::new();
    let r: Tensor<f64> = random_orthonormal(&mut rng, d, d).unwrap();
    let w = Tensor::from_fn(&[d, d], |_| rng.random_range(-1.0..1.0));
    let bias = Tensor::from_fn(&[d], |_| rng.random_range(-1.0..1.0));
    let iv = ReftIntervention {
        r: store.add("R", r.clone(), true),
        w: store.add("W", w.clone(), true),
        b: store.add("b", bias.clone(), true),
    };
    let h = Tensor::from_fn(&[3, d], |_| rng.random_range(-2.0..2.0));
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, &[]);
    let hv = tape.leaf(&h);
    let delta = reft_delta(&mut tape, &bound, hv, &iv).unwrap();
    let out = tape.add(hv, delta).unwrap();
    let (rm, wm) = (
        DMatrix::from_row_slice(d, d, r.data()),
        DMatrix::from_row_slice(d, d, w.data()),
    );
    for i in 0..3 {
        let hi = DMatrix::from_row_slice(d, 1, &h.data()[i * d..(i + 1) * d]);
        let expect = rm.transpose() * (&wm * hi + DMatrix::from_row_slice(d, 1, bias.data()));
        for j in 0..d {
            assert!((tape.value(out)[i * d + j] - expect[j]).abs() <= 1e-6);
        }
    }
}

#[test]
fn intervention_leaves_other_rows_untouched() {
    let d = 8;
    let mut rng = init_rng(5, 1);
    let mut store = ParamStore::<f32>::new();
    let iv = ReftIntervention::init(&mut store, &mut rng, "iv", d, 3).unwrap();
    for v in store.get_mut(iv.w).data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let x = Tensor::from_fn(&[7, d], |_| rng.random_range(-2.0f32..2.0));
    let sites = [0, 4];
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape, &[]);
    let xv = tape.leaf(&x);
    let h = tape.gather(xv, &sites).unwrap();
    let delta = reft_delta(&mut tape, &bound, h, &iv).unwrap();
    let out = tape.add_to_rows(xv, &sites, delta).unwrap();
    for i in 0..7 {
        let (a, b) = (
            &tape.value(out)[i * d..(i + 1) * d],
            &x.data()[i * d..(i + 1) * d],
        );
        if sites.contains(&i) {
            assert_ne!(a, b);
        } else {
            assert_eq!(a, b);
        }
    }

    // Positions before the suffix intervention are invisible to it under
    // causal attention.
    let cfg = config(ModelStyle::Autoregressive, NormPlacement::Pre);
    let reft = PeftConfig::Reft(ReftConfig {
        rank: 4,
        position: Some(Position::Suffix),
        layers: None,
    });
    let base = LadModel::<f32>::new(&cfg, &PeftConfig::None).unwrap();
    let mut adapted = LadModel::<f32>::new(&cfg, &reft).unwrap();
    for (_, p) in adapted
        .store
        .iter_mut()
        .filter(|(_, p)| p.name.ends_with(".W"))
    {
        p.tensor.data_mut().iter_mut().for_each(|v| *v += 0.3);
    }
    let rows = [row(&[3, 4, 5, 6, 7, 8], ModelStyle::Autoregressive)];
    let a = base.hidden_states(&rows).unwrap();
    let b = adapted.hidden_states(&rows).unwrap();
    let last = a.layers.last().unwrap();
    assert_eq!(
        rows_of(last, 16, 0, 5),
        rows_of(b.layers.last().unwrap(), 16, 0, 5)
    );
    assert_ne!(
        rows_of(last, 16, 5, 1),
        rows_of(b.layers.last().unwrap(), 16, 5, 1)
    );
}

#[test]
fn reft_rows_stay_orthonormal_at_every_step() {
    let peft = PeftConfig::Reft(ReftConfig {
        rank: 4,
        ..Default::default()
    });
    let (mut model, rows) = corpus_model(&peft, ModelStyle::Masked);
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 8,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let mut steps = 0;
    fit(&mut model, &rows, &cfg, |m, _| {
        steps += 1;
        for l in 0..m.config.layers {
            let iv = m.peft.intervention(l).unwrap();
            let err = orthonormality_error(m.store.get(iv.r));
            assert!(err < 1e-5, "step {steps} layer {l}: {err}");
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, 100);
}

#[test]
fn lora_update_keeps_its_rank() {
    let rank = 2;
    let peft = PeftConfig::Lora(LoraConfig {
        rank,
        alpha: 4.0,
        targets: Target::ALL.to_vec(),
        layers: None,
    });
    let (mut model, rows) = corpus_model(&peft, ModelStyle::Autoregressive);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        learning_rate: 1e-2,
        ..Default::default()
    };
    let mut checked = 0;
    fit(&mut model, &rows, &cfg, |m, _| {
        for l in 0..m.config.layers {
            for t in Target::ALL {
                let ad = m.peft.lora(l, t).unwrap();
                let (a, b) = (m.store.get(ad.a), m.store.get(ad.b));
                let d = m.config.hidden;
                let am = DMatrix::from_row_iterator(rank, d, a.data().iter().map(|&v| v as f64));
                let bm = DMatrix::from_row_iterator(d, rank, b.data().iter().map(|&v| v as f64));
                let update = (bm * am) * ad.gamma;
                let mut sv: Vec<f64> = update.singular_values().iter().copied().collect();
                sv.sort_by(|x, y| y.total_cmp(x));
                assert!(sv[0] > 0.0);
                assert!(sv[rank..].iter().all(|&s| s < 1e-6 * sv[0]), "{sv:?}");
                checked += 1;
            }
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(checked, 15 * 2 * 4);
}

#[test]
fn training_touches_only_trainable_parameters() {
    for peft in [
        PeftConfig::Lora(LoraConfig {
            rank: 2,
            alpha: 4.0,
            ..Default::default()
        }),
        PeftConfig::Reft(ReftConfig {
            rank: 2,
            ..Default::default()
        }),
    ] {
        let (mut model, rows) = corpus_model(&peft, ModelStyle::Masked);
        let before = model.store.clone();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        };
        fit(&mut model, &rows, &cfg, |_, _| Ok(())).unwrap();
        for ((_, old), (_, new)) in before.iter().zip(model.store.iter()) {
            if old.trainable() {
                assert_ne!(old.tensor, new.tensor, "{} never moved", old.name);
            } else {
                let bits =
                    |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(&old.tensor), bits(&new.tensor), "{} changed", old.name);
            }
        }
    }
}

#[test]
fn batch_loss_is_the_mean_of_example_losses() {
    let peft = PeftConfig::Reft(ReftConfig {
        rank: 2,
        ..Default::default()
    });
    let seqs = corpus(32);
    let texts: Vec<String> = seqs.iter().map(LogSequence::text).collect();
    let vocab = build_vocab(&texts, 1, MAX_LEN).unwrap();
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        ..config(ModelStyle::Masked, NormPlacement::Pre)
    };
    let model = LadModel::<f64>::new(&cfg, &peft).unwrap();
    let rows = encode_all(&seqs, &vocab, &cfg).unwrap();
    let batch_loss = |rows: &[TokenizedSequence]| {
        let mut tape = Tape::new();
        let b = model.store.bind(&mut tape, &[]);
        let z = model.forward_logits(&mut tape, &b, rows, None).unwrap();
        let labels: Vec<Label> = rows.iter().map(|r| r.label).collect();
        let l = loss(&mut tape, z, &labels).unwrap();
        tape.value(l)[0]
    };
    let total = batch_loss(&rows) * rows.len() as f64;
    let sum: f64 = rows
        .iter()
        .map(|r| batch_loss(std::slice::from_ref(r)))
        .sum();
    assert!((total - sum).abs() <= 1e-6, "{total} vs {sum}");
}
