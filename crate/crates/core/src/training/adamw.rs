use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::config(format!(
                "invalid optimiser settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates for one tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
}

/// One decoupled-weight-decay Adam update of `theta` at step `t` (from 1).
pub fn adamw_step<F: Scalar>(
    theta: &mut [F],
    grad: &[F],
    state: &mut Moments<F>,
    t: u64,
    cfg: &AdamWConfig,
) {
    if state.m.len() != theta.len() {
        state.m = vec![F::zero(); theta.len()];
        state.v = vec![F::zero(); theta.len()];
    }
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let c1 = F::of(1.0 - cfg.beta1.powi(t as i32));
    let c2 = F::of(1.0 - cfg.beta2.powi(t as i32));
    let lr = F::of(cfg.learning_rate);
    let eps = F::of(cfg.epsilon);
    let decay = F::of(cfg.learning_rate * cfg.weight_decay);
    for (((p, &g), m), v) in theta
        .iter_mut()
        .zip(grad)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = b1 * *m + (F::one() - b1) * g;
        *v = b2 * *v + (F::one() - b2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p = *p - lr * mhat / (vhat.sqrt() + eps) - decay * *p;
    }
}

/// Optimiser over every trainable tensor of a store.
#[derive(Clone, Debug)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Moments<F>>,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamW {
            config,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies the accumulated gradients. Nothing is updated if any gradient
    /// is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<F>) -> Result<()> {
        for (_, p) in store.iter().filter(|(_, p)| p.trainable()) {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite gradient in `{}` at element {i}",
                        p.name
                    )));
                }
            }
        }
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), Moments::default);
        }
        for (id, p) in store.iter_mut() {
            if !p.trainable() {
                continue;
            }
            let Some(g) = p.tensor.grad().map(<[F]>::to_vec) else {
                continue;
            };
            adamw_step(
                p.tensor.data_mut(),
                &g,
                &mut self.moments[id.index()],
                self.step,
                &self.config,
            );
        }
        Ok(())
    }
}
