use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::logs::Label;
use crate::model::{Bound, Linear, ParamStore};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Linear map from the selected hidden state to two class logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassifierHead {
    pub linear: Linear,
}

impl ClassifierHead {
    pub fn init<F: Scalar>(store: &mut ParamStore<F>, rng: &mut ChaCha8Rng, hidden: usize) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let weight = store.add(
            "head.weight",
            Tensor::from_fn(&[2, hidden], |_| F::of(dist.sample(rng))),
            true,
        );
        let bias = store.add("head.bias", Tensor::zeros(&[2]), true);
        ClassifierHead {
            linear: Linear { weight, bias },
        }
    }

    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Bound, h: Var) -> Result<Var> {
        self.linear.forward(tape, b, h)
    }

    /// Anomaly probability for one selected hidden state.
    pub fn score<F: Scalar>(&self, store: &ParamStore<F>, h: &[F]) -> Result<f64> {
        let w = store.get(self.linear.weight);
        let bias = store.get(self.linear.bias).data();
        if h.len() != w.matrix_dims().1 {
            return Err(Error::Dimension {
                op: "head",
                lhs: vec![1, h.len()],
                rhs: w.shape().to_vec(),
            });
        }
        let z: Vec<F> = (0..2)
            .map(|k| {
                w.row(k)
                    .iter()
                    .zip(h)
                    .fold(bias[k], |acc, (&a, &x)| acc + a * x)
            })
            .collect();
        Ok(anomaly_score(&z))
    }
}

/// Softmax probability of the anomalous class from `[normal, anomalous]` logits.
pub fn anomaly_score<F: Scalar>(logits: &[F]) -> f64 {
    let z0 = logits[0].to_f64().unwrap_or(f64::NAN);
    let z1 = logits[1].to_f64().unwrap_or(f64::NAN);
    1.0 / (1.0 + (z0 - z1).exp())
}

/// Anomalous only when the score is strictly above one half.
pub fn predicted_label(score: f64) -> Label {
    if score > 0.5 {
        Label::Anomalous
    } else {
        Label::Normal
    }
}

/// Mean cross-entropy of `batch x 2` logits.
pub fn loss<F: Scalar>(tape: &mut Tape<F>, logits: Var, labels: &[Label]) -> Result<Var> {
    let ids: Vec<usize> = labels.iter().map(|l| l.index()).collect();
    tape.cross_entropy(logits, &ids)
}
