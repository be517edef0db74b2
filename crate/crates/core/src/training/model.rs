use rand_chacha::ChaCha8Rng;

use super::head::{anomaly_score, ClassifierHead};
use crate::error::Result;
use crate::model::{init_rng, Bound, HiddenStates, ModelConfig, ParamStore, Transformer};
use crate::peft::{Peft, PeftConfig};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::TokenizedSequence;

const PEFT_STREAM: u64 = 1;
const HEAD_STREAM: u64 = 2;
/// Rows per forward pass when scoring without gradients.
const EVAL_CHUNK: usize = 64;

/// Frozen transformer, adapter and classification head sharing one store.
#[derive(Clone, Debug)]
pub struct LadModel<F> {
    pub config: ModelConfig,
    pub peft_config: PeftConfig,
    pub store: ParamStore<F>,
    pub transformer: Transformer,
    pub peft: Peft,
    pub head: ClassifierHead,
}

impl<F: Scalar> LadModel<F> {
    /// Initialises every parameter from `config.seed`. Base, adapter and head
    /// draw from separate streams, so the base is identical across methods.
    pub fn new(config: &ModelConfig, peft_config: &PeftConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let transformer = Transformer::init(config, &mut store)?;
        let peft = Peft::attach(
            peft_config,
            config,
            &mut store,
            &mut init_rng(config.seed, PEFT_STREAM),
        )?;
        let head = ClassifierHead::init(
            &mut store,
            &mut init_rng(config.seed, HEAD_STREAM),
            config.hidden,
        );
        Ok(LadModel {
            config: config.clone(),
            peft_config: peft_config.clone(),
            store,
            transformer,
            peft,
            head,
        })
    }

    /// Records the forward pass and returns `batch x 2` logits.
    pub fn forward_logits(
        &self,
        tape: &mut Tape<F>,
        b: &Bound,
        rows: &[TokenizedSequence],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let fwd = self
            .transformer
            .forward(tape, b, rows, &self.peft, dropout)?;
        let top = *fwd.hidden.last().expect("at least one layer");
        let h = tape.gather(top, &fwd.selected)?;
        self.head.forward(tape, b, h)
    }

    pub fn logits(&self, rows: &[TokenizedSequence]) -> Result<Tensor<F>> {
        let mut out = Vec::with_capacity(rows.len() * 2);
        for chunk in rows.chunks(EVAL_CHUNK) {
            let mut tape = Tape::new();
            let b = self.store.bind(&mut tape, &[]);
            let z = self.forward_logits(&mut tape, &b, chunk, None)?;
            out.extend_from_slice(tape.value(z));
        }
        Tensor::new(vec![rows.len(), 2], out)
    }

    /// Anomaly probability of every row.
    pub fn scores(&self, rows: &[TokenizedSequence]) -> Result<Vec<f64>> {
        let z = self.logits(rows)?;
        Ok((0..rows.len()).map(|i| anomaly_score(z.row(i))).collect())
    }

    pub fn hidden_states(&self, rows: &[TokenizedSequence]) -> Result<HiddenStates<F>> {
        self.transformer
            .hidden_states(&self.store, rows, &self.peft)
    }

    /// Digest of the initial values of all trainable parameters.
    pub fn trainable_checksum(&self) -> String {
        self.store.checksum(|p| p.trainable())
    }

    pub fn base_checksum(&self) -> String {
        self.store.checksum(|p| !p.trainable())
    }
}
