//! Cascaded output heads, answer decoding, BFS weak supervision and the joint loss.

mod metrics;

pub use metrics::{
    exact_match, f1_score, normalize_answer, support_scores, AnswerScores, ExampleScores, MetricsReport,
    SupportScores,
};

use rand::Rng;
use serde::Serialize;

use crate::context::Context;
use crate::graph::EntityGraph;
use crate::nn::{Linear, Lstm};
use crate::tensor::{Axis, ParamStore, PoolKind, Result, Tape, Tensor, TensorError, Var};

/// `S × M` matrix that averages token rows over each sentence segment.
/// Title tokens belong to no sentence.
pub fn sentence_pooling(context: &Context) -> Tensor {
    let m = context.len();
    let sentences: Vec<_> = context.sentences().collect();
    let mut data = vec![0.0; sentences.len() * m];
    for (s, seg) in sentences.iter().enumerate() {
        let w = 1.0 / (seg.end - seg.start) as f64;
        for i in seg.start..seg.end {
            data[s * m + i] = w;
        }
    }
    Tensor::new(&[sentences.len(), m], data).expect("pooling shape")
}

/// Four LSTMs wired as a cascade: support, start, end, answer type.
#[derive(Clone, Debug)]
pub struct PredictionHeads {
    pub f0: Lstm,
    pub f1: Lstm,
    pub f2: Lstm,
    pub f3: Lstm,
    pub support: Linear,
    pub start: Linear,
    pub end: Linear,
    pub answer_type: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutputs {
    /// One logit per sentence.
    pub support: Var,
    /// One logit per token.
    pub start: Var,
    pub end: Var,
    /// Span, yes, no.
    pub answer_type: Var,
}

impl PredictionHeads {
    pub fn new<R: Rng>(store: &mut ParamStore, d2: usize, rng: &mut R) -> Self {
        PredictionHeads {
            f0: Lstm::new(store, "heads.f0", d2, d2, rng),
            f1: Lstm::new(store, "heads.f1", 2 * d2, d2, rng),
            f2: Lstm::new(store, "heads.f2", 3 * d2, d2, rng),
            f3: Lstm::new(store, "heads.f3", 3 * d2, d2, rng),
            support: Linear::new(store, "heads.support", d2, 1, rng),
            start: Linear::new(store, "heads.start", d2, 1, rng),
            end: Linear::new(store, "heads.end", d2, 1, rng),
            answer_type: Linear::new(store, "heads.type", d2, 3, rng),
        }
    }

    /// `pooling` is the `S × M` matrix from [`sentence_pooling`].
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, c: Var, pooling: Var) -> Result<HeadOutputs> {
        let m = tape.value(c).rows();
        if m == 0 {
            return Err(TensorError::EmptyAxis);
        }
        let o_sup = self.f0.forward(tape, store, c)?;
        let x1 = tape.concat_cols(&[c, o_sup])?;
        let o_start = self.f1.forward(tape, store, x1)?;
        let x2 = tape.concat_cols(&[c, o_sup, o_start])?;
        let o_end = self.f2.forward(tape, store, x2)?;
        let x3 = tape.concat_cols(&[c, o_sup, o_end])?;
        let o_type = self.f3.forward(tape, store, x3)?;

        let tok_sup = self.support.forward(tape, store, o_sup)?;
        let sup = tape.matmul(pooling, tok_sup)?;
        let s = tape.value(sup).rows();
        let support = tape.reshape(sup, &[s])?;
        let start = self.start.forward(tape, store, o_start)?;
        let start = tape.reshape(start, &[m])?;
        let end = self.end.forward(tape, store, o_end)?;
        let end = tape.reshape(end, &[m])?;
        let pooled = tape.pool(o_type, PoolKind::Mean, Axis::Rows)?;
        let answer_type = self.answer_type.forward(tape, store, pooled)?;
        let answer_type = tape.reshape(answer_type, &[3])?;
        Ok(HeadOutputs {
            support,
            start,
            end,
            answer_type,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Decoded {
    /// Inclusive token range.
    Span(usize, usize),
    Yes,
    No,
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Yes/no when the type head says so; otherwise the span `i ≤ j < i + max_span`
/// maximizing `start[i] + end[j]`, ties to the smallest `i` then `j`.
pub fn decode_answer(start: &[f64], end: &[f64], type_logits: &[f64], max_span: usize) -> Decoded {
    match argmax(type_logits) {
        1 => return Decoded::Yes,
        2 => return Decoded::No,
        _ => {}
    }
    let mut best = (0, 0);
    let mut best_score = f64::NEG_INFINITY;
    for (i, &s) in start.iter().enumerate() {
        for (j, &e) in end.iter().enumerate().skip(i).take(max_span) {
            if s + e > best_score {
                best_score = s + e;
                best = (i, j);
            }
        }
    }
    Decoded::Span(best.0, best.1)
}

impl Decoded {
    pub fn text(&self, tokens: &[String]) -> String {
        match *self {
            Decoded::Span(i, j) => tokens[i..=j.min(tokens.len().saturating_sub(1))].join(" "),
            Decoded::Yes => "yes".into(),
            Decoded::No => "no".into(),
        }
    }
}

/// Heuristic per-hop node targets for the soft masks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HeuristicMasks {
    /// Nodes whose surface occurs in the question.
    pub start: Vec<bool>,
    /// `bfs[0] = start`; `bfs[t]` holds the nodes first reached at step `t`.
    pub bfs: Vec<Vec<bool>>,
    /// No start node was found; weak supervision is skipped.
    pub skip_weak: bool,
}

pub fn bfs_masks(graph: &EntityGraph, question: &[String], hops: usize) -> HeuristicMasks {
    let n = graph.len();
    let start: Vec<bool> = graph
        .nodes
        .iter()
        .map(|m| crate::data::find_subsequence(question, &m.surface).is_some())
        .collect();
    if !start.iter().any(|&b| b) {
        return HeuristicMasks {
            start,
            bfs: Vec::new(),
            skip_weak: true,
        };
    }
    let mut visited = start.clone();
    let mut bfs = vec![start.clone()];
    while bfs.len() < hops {
        let frontier = bfs.last().expect("non-empty");
        let mut next = vec![false; n];
        for i in (0..n).filter(|&i| frontier[i]) {
            for j in graph.neighbors(i) {
                if !visited[j] {
                    next[j] = true;
                }
            }
        }
        for j in 0..n {
            visited[j] |= next[j];
        }
        bfs.push(next);
    }
    HeuristicMasks {
        start,
        bfs,
        skip_weak: false,
    }
}

/// Targets for one example.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Labels {
    /// Token span of the answer in the context; `None` for yes/no answers or
    /// when the answer was not kept by the selector.
    pub span: Option<(usize, usize)>,
    pub answer_type: usize,
    /// One entry per context sentence.
    pub support: Vec<f64>,
}

impl Labels {
    pub fn build(example: &crate::data::QaExample, context: &Context) -> Self {
        let span = match &example.answer {
            crate::data::Answer::Span { text } => {
                context.find_in_sentences(&crate::data::tokenize(text)).map(|(s, e)| (s, e - 1))
            }
            _ => None,
        };
        Labels {
            span,
            answer_type: example.answer.type_index(),
            support: context.support_labels(example),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossWeights {
    pub support: f64,
    pub answer_type: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            support: 1.0,
            answer_type: 1.0,
            mask: 1.0,
        }
    }
}

/// The individual loss terms, unweighted, and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub start: Option<Var>,
    pub end: Option<Var>,
    pub support: Option<Var>,
    pub answer_type: Var,
    pub mask: Option<Var>,
}

/// `L_start + L_end + λs·L_sup + λt·L_type + λmask·Σ_t BCE(m_t, bfs_t)`.
/// Terms whose target is absent are left out.
pub fn joint_loss(
    tape: &mut Tape,
    out: &HeadOutputs,
    labels: &Labels,
    masks: &[Var],
    heuristics: Option<&HeuristicMasks>,
    weights: LossWeights,
) -> Result<LossTerms> {
    let s = tape.value(out.support).len();
    if s != labels.support.len() {
        return Err(TensorError::ShapeMismatch {
            op: "joint_loss",
            left: vec![s],
            right: vec![labels.support.len()],
        });
    }
    let mut parts: Vec<Var> = Vec::new();
    let (mut start, mut end) = (None, None);
    if let Some((i, j)) = labels.span {
        let ls = tape.cross_entropy(out.start, i)?;
        let le = tape.cross_entropy(out.end, j)?;
        parts.push(ls);
        parts.push(le);
        start = Some(ls);
        end = Some(le);
    }
    let support = if s > 0 {
        let p = tape.sigmoid(out.support)?;
        let l = tape.bce(p, &labels.support)?;
        parts.push(tape.scale(l, weights.support)?);
        Some(l)
    } else {
        None
    };
    let answer_type = tape.cross_entropy(out.answer_type, labels.answer_type)?;
    parts.push(tape.scale(answer_type, weights.answer_type)?);

    let mut mask = None;
    if let Some(h) = heuristics.filter(|h| !h.skip_weak) {
        let mut terms = Vec::new();
        for (&m, target) in masks.iter().zip(&h.bfs) {
            let t: Vec<f64> = target.iter().map(|&b| f64::from(u8::from(b))).collect();
            terms.push(tape.bce(m, &t)?);
        }
        if !terms.is_empty() {
            let stacked = tape.concat_cols(&terms)?;
            let sum = tape.sum(stacked)?;
            parts.push(tape.scale(sum, weights.mask)?);
            mask = Some(sum);
        }
    }
    let stacked = tape.concat_cols(&parts)?;
    let total = tape.sum(stacked)?;
    Ok(LossTerms {
        total,
        start,
        end,
        support,
        answer_type,
        mask,
    })
}
