use std::ops::Index;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

impl<F: Scalar> Param<F> {
    pub fn trainable(&self) -> bool {
        self.tensor.requires_grad()
    }
}

/// Every named parameter of a model, in registration order.
///
/// Trainability is the tensor's `requires_grad` flag: frozen tensors are
/// bound to the tape without gradient tracking and the optimiser skips them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        mut tensor: Tensor<F>,
        trainable: bool,
    ) -> ParamId {
        tensor.set_requires_grad(trainable);
        self.params.push(Param {
            name: name.into(),
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<F>)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalar values.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable())
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Records every parameter as a leaf. `overrides` substitutes existing
    /// tape values for selected parameters (used by gradient checks).
    pub fn bind(&self, tape: &mut Tape<F>, overrides: &[(ParamId, Var)]) -> Bound {
        let vars = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| match overrides.iter().find(|(id, _)| id.0 == i) {
                Some(&(_, v)) => v,
                None => tape.leaf(&p.tensor),
            })
            .collect();
        Bound { vars }
    }

    /// Copies gradients of trainable parameters from a tape into the tensors.
    pub fn collect_grads(&mut self, tape: &Tape<F>, bound: &Bound) -> Result<()> {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable() {
                continue;
            }
            match tape.grad(bound.vars[i]) {
                Some(g) => p.tensor.accumulate_grad(g)?,
                None => p.tensor.accumulate_grad(&vec![F::zero(); p.tensor.len()])?,
            }
        }
        Ok(())
    }

    /// Converts every parameter to another precision, keeping trainability.
    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Replaces values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Load {
                what: "parameters".into(),
                reason: format!("expected {} tensors, found {}", self.len(), other.len()),
            });
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(Error::Load {
                    what: "parameters".into(),
                    reason: format!(
                        "`{}` {:?} does not match `{}` {:?}",
                        theirs.name,
                        theirs.tensor.shape(),
                        mine.name,
                        mine.tensor.shape()
                    ),
                });
            }
            mine.tensor.data_mut().copy_from_slice(theirs.tensor.data());
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and raw little-endian values.
    pub fn checksum(&self, filter: impl Fn(&Param<F>) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| filter(p)) {
            h.update(p.name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in p.tensor.data() {
                h.update(x.to_f64().unwrap().to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Index<ParamId> for Bound {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// `y = x W^T + b` with `W` stored `out x in`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, b: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul_t(x, b[self.weight], false, true)?;
        tape.add(y, b[self.bias])
    }

    pub fn dims<F: Scalar>(&self, store: &ParamStore<F>) -> (usize, usize) {
        store.get(self.weight).matrix_dims()
    }

    /// Whether neither weight nor bias can be updated.
    pub fn frozen<F: Scalar>(&self, store: &ParamStore<F>) -> bool {
        !store.get(self.weight).requires_grad() && !store.get(self.bias).requires_grad()
    }
}
