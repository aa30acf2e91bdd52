//! Joint question/context encoder followed by bi-attention.

use rand::Rng;

use crate::config::Config;
use crate::data::SEP;
use crate::nn::{BiAttention, BiAttentionOut, BiLstm};
use crate::tensor::{ParamId, ParamStore, Result, Tape, TensorError, Var};
use crate::Dropout;

#[derive(Clone, Debug)]
pub struct Encoder {
    pub embedding: ParamId,
    pub contextualizer: BiLstm,
    pub bi_attention: BiAttention,
    pub d1: usize,
    pub d2: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, vocab_size: usize, cfg: &Config, rng: &mut R) -> Self {
        Encoder {
            embedding: store.add_uniform("encoder.embedding", &[vocab_size, cfg.d1], 0.1, rng),
            contextualizer: BiLstm::new(store, "encoder.lstm", cfg.d1, cfg.d1 / 2, rng),
            bi_attention: BiAttention::new(store, "encoder.bi_attention", cfg.d1, cfg.d2, true, rng),
            d1: cfg.d1,
            d2: cfg.d2,
            max_seq_len: cfg.max_seq_len,
            dropout: cfg.dropout_lstm,
        }
    }

    /// Contextualizes `[question ; SEP ; context]` and splits it back into
    /// `Q` (`L × d1`) and `C` (`M × d1`).
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        question: &[usize],
        context: &[usize],
        dropout: &mut Dropout<'_>,
    ) -> Result<(Var, Var)> {
        let (l, m) = (question.len(), context.len());
        if l == 0 || m == 0 {
            return Err(TensorError::Invalid("question and context must be non-empty".into()));
        }
        if l + 1 + m > self.max_seq_len {
            return Err(TensorError::Invalid(format!(
                "sequence of {} tokens exceeds max_seq_len {}",
                l + 1 + m,
                self.max_seq_len
            )));
        }
        let ids: Vec<usize> = question.iter().copied().chain([SEP]).chain(context.iter().copied()).collect();
        let table = tape.param(store, self.embedding);
        let emb = tape.gather_rows(table, &ids)?;
        let emb = dropout.apply(tape, emb, self.dropout)?;
        let h = self.contextualizer.forward(tape, store, emb)?;
        let q = tape.slice_rows(h, 0, l)?;
        let c = tape.slice_rows(h, l + 1, l + 1 + m)?;
        Ok((q, c))
    }

    /// Returns `(Q0, C0)`, each projected to `d2`, plus the raw attention output.
    pub fn attend(&self, tape: &mut Tape, store: &ParamStore, q: Var, c: Var) -> Result<(Var, Var, BiAttentionOut)> {
        let out = self.bi_attention.forward(tape, store, c, q)?;
        let c0 = out.x_out;
        let q0 = out.y_out.expect("encoder bi-attention computes both sides");
        Ok((q0, c0, out))
    }
}
