//! The reader: encoder, `T` fusion blocks and the prediction heads, plus the
//! per-example inputs it consumes.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::chains::HopScores;
use crate::config::Config;
use crate::context::Context;
use crate::data::{QaExample, Vocabulary};
use crate::encoder::Encoder;
use crate::fusion::{run_hops, FusionBlock, FusionRun, GraphInput};
use crate::graph::{recognize, EntityGraph, Gazetteer};
use crate::predictor::{
    bfs_masks, decode_answer, joint_loss, sentence_pooling, Decoded, HeadOutputs, HeuristicMasks, Labels,
    LossTerms, LossWeights, PredictionHeads,
};
use crate::tensor::{ParamStore, Result, Tape, Tensor, TensorError, Var};
use crate::Dropout;

/// Everything the reader needs for one example, computed once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub id: String,
    pub question_ids: Vec<usize>,
    pub context: Context,
    pub context_ids: Vec<usize>,
    pub graph: EntityGraph,
    pub graph_input: GraphInput,
    pub pooling: Tensor,
    pub labels: Labels,
    pub heuristics: HeuristicMasks,
    pub gold_support: BTreeSet<(usize, usize)>,
    pub gold_answer: String,
}

impl Prepared {
    /// Assembles the kept paragraphs, dropping trailing ones while the
    /// sequence exceeds `max_seq_len` (the first is always kept).
    pub fn new(
        example: &QaExample,
        kept: &[usize],
        vocab: &Vocabulary,
        gazetteer: &Gazetteer,
        cfg: &Config,
    ) -> Result<Self> {
        if kept.is_empty() {
            return Err(TensorError::Invalid(format!("{}: no paragraph selected", example.id)));
        }
        let mut kept = kept.to_vec();
        let mut context = Context::assemble(example, &kept);
        while example.question.len() + 1 + context.len() > cfg.max_seq_len && kept.len() > 1 {
            kept.pop();
            context = Context::assemble(example, &kept);
        }
        if context.is_empty() {
            return Err(TensorError::Invalid(format!("{}: empty context", example.id)));
        }
        let mentions = recognize(&context, gazetteer);
        let graph = EntityGraph::build(&mentions, &context, cfg.max_nodes);
        let graph_input = GraphInput::new(&graph, context.len())?;
        Ok(Prepared {
            id: example.id.clone(),
            question_ids: vocab.encode(&example.question),
            context_ids: vocab.encode(&context.tokens),
            pooling: sentence_pooling(&context),
            labels: Labels::build(example, &context),
            heuristics: bfs_masks(&graph, &example.question, cfg.hops),
            gold_support: example.supporting_facts.iter().copied().collect(),
            gold_answer: example.answer.text().to_string(),
            context,
            graph,
            graph_input,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReaderOutput {
    pub heads: HeadOutputs,
    pub fusion: FusionRun,
}

/// Decoded outputs and the per-hop scores behind them.
#[derive(Clone, Debug, Serialize)]
pub struct Prediction {
    pub decoded: Decoded,
    pub answer: String,
    pub support: BTreeSet<(usize, usize)>,
    pub support_probs: Vec<f64>,
    pub hop_scores: HopScores,
}

#[derive(Clone, Debug)]
pub struct Reader {
    pub encoder: Encoder,
    pub blocks: Vec<FusionBlock>,
    pub heads: PredictionHeads,
    pub config: Config,
}

impl Reader {
    pub fn new<R: Rng>(store: &mut ParamStore, vocab_size: usize, cfg: &Config, rng: &mut R) -> Self {
        let encoder = Encoder::new(store, vocab_size, cfg, rng);
        let blocks = (0..cfg.hops)
            .map(|t| {
                let last = t + 1 == cfg.hops;
                FusionBlock::new(store, &format!("fusion{t}"), cfg.d2, !last, cfg.dropout_gat, cfg.dropout_lstm, rng)
            })
            .collect();
        let heads = PredictionHeads::new(store, cfg.d2, rng);
        Reader {
            encoder,
            blocks,
            heads,
            config: cfg.clone(),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        prep: &Prepared,
        dropout: &mut Dropout<'_>,
    ) -> Result<ReaderOutput> {
        let (q, c) = self.encoder.encode(tape, store, &prep.question_ids, &prep.context_ids, dropout)?;
        let (q0, c0, _) = self.encoder.attend(tape, store, q, c)?;
        let fusion = run_hops(&self.blocks, tape, store, c0, q0, &prep.graph_input, dropout)?;
        let pooling = tape.constant(prep.pooling.clone())?;
        let heads = self.heads.forward(tape, store, fusion.c, pooling)?;
        Ok(ReaderOutput { heads, fusion })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            support: self.config.lambda_s,
            answer_type: self.config.lambda_t,
            mask: self.config.lambda_mask,
        }
    }

    pub fn loss(&self, tape: &mut Tape, out: &ReaderOutput, prep: &Prepared) -> Result<LossTerms> {
        let masks = out.fusion.masks();
        let weights = self.loss_weights();
        let heuristics = (weights.mask > 0.0).then_some(&prep.heuristics);
        joint_loss(tape, &out.heads, &prep.labels, &masks, heuristics, weights)
    }

    /// Eval-mode forward pass and decoding.
    pub fn predict(&self, store: &ParamStore, prep: &Prepared) -> Result<Prediction> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, prep, &mut Dropout::eval())?;
        let h = &out.heads;
        let decoded = decode_answer(
            tape.value(h.start).data(),
            tape.value(h.end).data(),
            tape.value(h.answer_type).data(),
            self.config.max_span,
        );
        let support_probs: Vec<f64> = tape
            .value(h.support)
            .data()
            .iter()
            .map(|&x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let support = prep
            .context
            .sentences()
            .zip(&support_probs)
            .filter(|(_, &p)| p > 0.5)
            .map(|(s, _)| (s.paragraph, s.sentence.expect("sentence segment")))
            .collect();
        let hop_scores = HopScores {
            masks: out.fusion.masks().iter().map(|&m| tape.value(m).data().to_vec()).collect(),
            alphas: out.fusion.alphas().iter().map(|&a| tape.value(a).clone()).collect(),
        };
        Ok(Prediction {
            answer: decoded.text(&prep.context.tokens),
            decoded,
            support,
            support_probs,
            hop_scores,
        })
    }

    /// Variables of the last forward pass that tests and demos inspect.
    pub fn mask_vars(out: &ReaderOutput) -> Vec<Var> {
        out.fusion.masks()
    }
}
