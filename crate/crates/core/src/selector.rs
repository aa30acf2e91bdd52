//! Paragraph relevance scoring and context assembly.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::context::Context;
use crate::data::{QaExample, Vocabulary, SEP};
use crate::nn::{Linear, Lstm};
use crate::tensor::{Adam, AdamConfig, Axis, ParamId, ParamStore, PoolKind, Result, Tape, TensorError, Var};

/// Single LSTM over `[question ; SEP ; title ; sentences]`, max-pooled, one logit.
#[derive(Clone, Debug)]
pub struct SelectorModel {
    pub embedding: ParamId,
    pub lstm: Lstm,
    pub head: Linear,
}

/// Paragraph tokens as the selector reads them: title, then every sentence.
pub fn paragraph_tokens(example: &QaExample, p: usize) -> Vec<String> {
    let para = &example.paragraphs[p];
    para.title.iter().chain(para.sentences.iter().flatten()).cloned().collect()
}

/// 1 for paragraphs holding at least one supporting fact.
pub fn selector_labels(example: &QaExample) -> Vec<f64> {
    let gold = example.supporting_paragraphs();
    (0..example.paragraphs.len())
        .map(|p| if gold.contains(&p) { 1.0 } else { 0.0 })
        .collect()
}

impl SelectorModel {
    pub fn new<R: Rng>(store: &mut ParamStore, vocab_size: usize, dim: usize, rng: &mut R) -> Self {
        SelectorModel {
            embedding: store.add_uniform("selector.embedding", &[vocab_size, dim], 0.1, rng),
            lstm: Lstm::new(store, "selector.lstm", dim, dim, rng),
            head: Linear::new(store, "selector.head", dim, 1, rng),
        }
    }

    /// Relevance probability of one paragraph, as a length-1 variable.
    pub fn score_var(&self, tape: &mut Tape, store: &ParamStore, question: &[usize], paragraph: &[usize]) -> Result<Var> {
        if question.is_empty() {
            return Err(TensorError::Invalid("empty question".into()));
        }
        let ids: Vec<usize> = question.iter().copied().chain([SEP]).chain(paragraph.iter().copied()).collect();
        let table = tape.param(store, self.embedding);
        let x = tape.gather_rows(table, &ids)?;
        let h = self.lstm.forward(tape, store, x)?;
        let pooled = tape.pool(h, PoolKind::Max, Axis::Rows)?;
        let logit = self.head.forward(tape, store, pooled)?;
        let logit = tape.reshape(logit, &[1])?;
        tape.sigmoid(logit)
    }

    pub fn score(&self, store: &ParamStore, question: &[usize], paragraph: &[usize]) -> Result<f64> {
        let mut tape = Tape::new();
        let p = self.score_var(&mut tape, store, question, paragraph)?;
        Ok(tape.value(p).item())
    }

    pub fn score_example(&self, store: &ParamStore, vocab: &Vocabulary, example: &QaExample) -> Result<Vec<f64>> {
        let q = vocab.encode(&example.question);
        (0..example.paragraphs.len())
            .map(|p| self.score(store, &q, &vocab.encode(&paragraph_tokens(example, p))))
            .collect()
    }
}

/// Paragraphs scoring above `eta`, in input order; the single best paragraph
/// when none passes (first on ties).
pub fn select_paragraphs(scores: &[f64], eta: f64) -> Vec<usize> {
    let kept: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] > eta).collect();
    if !kept.is_empty() || scores.is_empty() {
        return kept;
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    vec![best]
}

pub fn select_context(example: &QaExample, scores: &[f64], eta: f64) -> Context {
    Context::assemble(example, &select_paragraphs(scores, eta))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionRow {
    pub example_id: String,
    pub paragraph_idx: usize,
    pub score: f64,
    pub kept: bool,
    pub is_gold: bool,
}

pub fn selection_rows(example: &QaExample, scores: &[f64], eta: f64) -> Vec<SelectionRow> {
    let kept = select_paragraphs(scores, eta);
    let labels = selector_labels(example);
    scores
        .iter()
        .enumerate()
        .map(|(p, &score)| SelectionRow {
            example_id: example.id.clone(),
            paragraph_idx: p,
            score,
            kept: kept.contains(&p),
            is_gold: labels[p] == 1.0,
        })
        .collect()
}

/// Micro-averaged precision/recall of kept paragraphs against gold paragraphs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SelectionQuality {
    pub precision: f64,
    pub recall: f64,
    pub mean_kept: f64,
}

impl SelectionQuality {
    pub fn from_rows(rows: &[SelectionRow]) -> Self {
        let kept = rows.iter().filter(|r| r.kept).count() as f64;
        let gold = rows.iter().filter(|r| r.is_gold).count() as f64;
        let tp = rows.iter().filter(|r| r.kept && r.is_gold).count() as f64;
        let examples: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.example_id.as_str()).collect();
        SelectionQuality {
            precision: if kept > 0.0 { tp / kept } else { 0.0 },
            recall: if gold > 0.0 { tp / gold } else { 0.0 },
            mean_kept: if examples.is_empty() { 0.0 } else { kept / examples.len() as f64 },
        }
    }
}

/// Trains with per-example mean BCE over all paragraphs and one Adam step per example.
pub fn train_selector(
    model: &SelectorModel,
    store: &mut ParamStore,
    vocab: &Vocabulary,
    train: &[QaExample],
    epochs: usize,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(TensorError::Invalid("selector training set is empty".into()));
    }
    let encoded: Vec<(Vec<usize>, Vec<Vec<usize>>, Vec<f64>)> = train
        .iter()
        .map(|ex| {
            let q = vocab.encode(&ex.question);
            let ps = (0..ex.paragraphs.len())
                .map(|p| vocab.encode(&paragraph_tokens(ex, p)))
                .collect();
            (q, ps, selector_labels(ex))
        })
        .collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        store,
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for &i in &order {
            let (q, ps, labels) = &encoded[i];
            let mut tape = Tape::new();
            let mut probs = Vec::with_capacity(ps.len());
            for p in ps {
                probs.push(model.score_var(&mut tape, store, q, p)?);
            }
            let probs = tape.concat_cols(&probs)?;
            let loss = tape.bce(probs, labels)?;
            total += tape.value(loss).item();
            tape.backward(loss)?;
            tape.accumulate_param_grads(store);
            adam.step(store);
        }
        curve.push(total / train.len() as f64);
    }
    Ok(curve)
}
