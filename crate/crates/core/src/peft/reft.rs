use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::random_orthonormal;
use crate::error::Result;
use crate::model::{Bound, ModelStyle, ParamId, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::TokenizedSequence;

/// Which position of a sequence is intervened on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    /// The first position (CLS in masked style).
    Prefix,
    /// The last real token.
    Suffix,
}

impl Position {
    pub fn default_for(style: ModelStyle) -> Position {
        match style {
            ModelStyle::Masked => Position::Prefix,
            ModelStyle::Autoregressive => Position::Suffix,
        }
    }

    pub fn index(self, row: &TokenizedSequence) -> usize {
        match self {
            Position::Prefix => 0,
            Position::Suffix => row.real_len().max(1) - 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReftConfig {
    pub rank: usize,
    /// `None` picks the position the classifier reads for the model style.
    pub position: Option<Position>,
    /// `None` intervenes before every layer.
    pub layers: Option<Vec<usize>>,
}

impl Default for ReftConfig {
    fn default() -> Self {
        ReftConfig {
            rank: 8,
            position: None,
            layers: None,
        }
    }
}

/// `R` (`rank x d`, orthonormal rows), `W` (`rank x d`) and `b` (`rank`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReftIntervention {
    pub r: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl ReftIntervention {
    /// Random orthonormal `R` with `W = R` and `b = 0`: the identity at init.
    pub fn init<F: Scalar>(
        store: &mut ParamStore<F>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        rank: usize,
    ) -> Result<ReftIntervention> {
        let r: Tensor<F> = random_orthonormal(rng, rank, d)?;
        let w = r.clone();
        Ok(ReftIntervention {
            r: store.add(format!("{name}.R"), r, true),
            w: store.add(format!("{name}.W"), w, true),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[rank]), true),
        })
    }
}

/// `(W h + b - R h) R` for each row `h` of `h`.
pub fn reft_delta<F: Scalar>(
    tape: &mut Tape<F>,
    b: &Bound,
    h: Var,
    iv: &ReftIntervention,
) -> Result<Var> {
    let wh = tape.matmul_t(h, b[iv.w], false, true)?;
    let wh = tape.add(wh, b[iv.b])?;
    let rh = tape.matmul_t(h, b[iv.r], false, true)?;
    let diff = tape.sub(wh, rh)?;
    tape.matmul(diff, b[iv.r])
}

/// `h + R^T (W h + b - R h)` applied row-wise.
pub fn reft_forward<F: Scalar>(
    tape: &mut Tape<F>,
    b: &Bound,
    h: Var,
    iv: &ReftIntervention,
) -> Result<Var> {
    let delta = reft_delta(tape, b, h, iv)?;
    tape.add(h, delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_example() {
        let mut store = ParamStore::<f64>::new();
        let iv = ReftIntervention {
            r: store.add("R", Tensor::from_rows(&[&[1.0]]), true),
            w: store.add("W", Tensor::from_rows(&[&[2.0]]), true),
            b: store.add("b", Tensor::from_rows(&[&[1.0]]), true),
        };
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, &[]);
        let h = tape.constant(1, 1, vec![3.0]).unwrap();
        let out = reft_forward(&mut tape, &bound, h, &iv).unwrap();
        assert_eq!(tape.value(out), &[7.0]);
    }

    #[test]
    fn suffix_is_last_real_token() {
        let row = TokenizedSequence {
            ids: vec![5, 6, 7, 0, 0],
            mask: vec![1, 1, 1, 0, 0],
            selected: 2,
            label: crate::logs::Label::Normal,
        };
        assert_eq!(Position::Suffix.index(&row), 2);
        assert_eq!(Position::Prefix.index(&row), 0);
    }
}
