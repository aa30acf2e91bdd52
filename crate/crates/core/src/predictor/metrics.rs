//! Answer, supporting-fact and joint metrics in the usual multi-hop QA style.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

/// Lowercases, strips punctuation and the articles a/an/the, and collapses whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AnswerScores {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Token-overlap F1 after normalization. Yes/no/noanswer must match exactly.
pub fn f1_score(prediction: &str, gold: &str) -> AnswerScores {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let em = f64::from(u8::from(p == g));
    let special = ["yes", "no", "noanswer"];
    if (special.contains(&p.as_str()) || special.contains(&g.as_str())) && p != g {
        return AnswerScores { em, ..Default::default() };
    }
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return AnswerScores { em, ..Default::default() };
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    AnswerScores {
        em,
        f1: 2.0 * precision * recall / (precision + recall),
        precision,
        recall,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SupportScores {
    pub em: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Set comparison of `(paragraph, sentence)` pairs.
pub fn support_scores(prediction: &BTreeSet<(usize, usize)>, gold: &BTreeSet<(usize, usize)>) -> SupportScores {
    let tp = prediction.intersection(gold).count() as f64;
    let fp = prediction.len() as f64 - tp;
    let fn_ = gold.len() as f64 - tp;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    SupportScores {
        em: f64::from(u8::from(fp + fn_ == 0.0)),
        f1,
        precision,
        recall,
    }
}

/// Per-example scores including the joint metrics, which multiply the answer
/// and support precisions and recalls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ExampleScores {
    pub answer: AnswerScores,
    pub support: SupportScores,
    pub joint_em: f64,
    pub joint_f1: f64,
}

impl ExampleScores {
    pub fn compute(
        prediction: &str,
        gold: &str,
        predicted_support: &BTreeSet<(usize, usize)>,
        gold_support: &BTreeSet<(usize, usize)>,
    ) -> Self {
        let answer = f1_score(prediction, gold);
        let support = support_scores(predicted_support, gold_support);
        let p = answer.precision * support.precision;
        let r = answer.recall * support.recall;
        let joint_f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        ExampleScores {
            answer,
            support,
            joint_em: answer.em * support.em,
            joint_f1,
        }
    }
}

/// Averages over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub n: usize,
    pub answer_em: f64,
    pub answer_f1: f64,
    pub support_em: f64,
    pub support_f1: f64,
    pub joint_em: f64,
    pub joint_f1: f64,
}

impl MetricsReport {
    pub fn aggregate(scores: &[ExampleScores]) -> Self {
        let n = scores.len();
        if n == 0 {
            return MetricsReport::default();
        }
        let mean = |f: &dyn Fn(&ExampleScores) -> f64| scores.iter().map(f).sum::<f64>() / n as f64;
        MetricsReport {
            n,
            answer_em: mean(&|s| s.answer.em),
            answer_f1: mean(&|s| s.answer.f1),
            support_em: mean(&|s| s.support.em),
            support_f1: mean(&|s| s.support.f1),
            joint_em: mean(&|s| s.joint_em),
            joint_f1: mean(&|s| s.joint_f1),
        }
    }

    pub const CSV_HEADER: &'static str = "answer_em,answer_f1,support_em,support_f1,joint_em,joint_f1";

    pub fn csv_fields(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.answer_em, self.answer_f1, self.support_em, self.support_f1, self.joint_em, self.joint_f1
        )
    }
}
