//! Reasoning paths read off the per-hop soft masks and attention matrices, and
//! the entity-level support (ESP) metrics built on them.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::Serialize;

use crate::graph::EntityGraph;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReasoningPath {
    pub nodes: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("nodes {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error("path has {got} nodes, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("node {0} is out of range")]
    OutOfRange(usize),
}

/// Per-hop masks (`N` each) and attention matrices (`N × N`) of one example.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HopScores {
    pub masks: Vec<Vec<f64>>,
    pub alphas: Vec<Tensor>,
}

impl HopScores {
    pub fn hops(&self) -> usize {
        self.masks.len()
    }
}

/// `Π_i m_i[p_i] · α_i[p_i, p_{i+1}]`.
pub fn path_score(graph: &EntityGraph, path: &[usize], scores: &HopScores) -> Result<f64, ChainError> {
    let t = scores.hops();
    if path.len() != t + 1 {
        return Err(ChainError::Length {
            got: path.len(),
            expected: t + 1,
        });
    }
    if let Some(&bad) = path.iter().find(|&&p| p >= graph.len()) {
        return Err(ChainError::OutOfRange(bad));
    }
    let mut score = 1.0;
    for i in 0..t {
        let (a, b) = (path[i], path[i + 1]);
        if !graph.adjacent(a, b) {
            return Err(ChainError::NotAdjacent(a, b));
        }
        score *= scores.masks[i][a] * scores.alphas[i].get(a, b);
    }
    Ok(score)
}

/// All walks of `hops + 1` nodes, best `k` by score; ties go to the
/// lexicographically smaller node sequence.
pub fn top_k_paths(graph: &EntityGraph, scores: &HopScores, k: usize) -> Vec<ReasoningPath> {
    let t = scores.hops();
    let mut all = Vec::new();
    let mut stack: Vec<(Vec<usize>, f64)> = (0..graph.len()).rev().map(|i| (vec![i], 1.0)).collect();
    while let Some((path, score)) = stack.pop() {
        if path.len() == t + 1 {
            all.push(ReasoningPath { nodes: path, score });
            continue;
        }
        let hop = path.len() - 1;
        let last = *path.last().expect("non-empty");
        let neighbors: Vec<usize> = graph.neighbors(last).collect();
        for &j in neighbors.iter().rev() {
            let s = score * scores.masks[hop][last] * scores.alphas[hop].get(last, j);
            let mut next = path.clone();
            next.push(j);
            stack.push((next, s));
        }
    }
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.nodes.cmp(&b.nodes))
    });
    all.truncate(k);
    all
}

/// Number of walks with `hops + 1` nodes.
pub fn count_walks(graph: &EntityGraph, hops: usize) -> usize {
    let n = graph.len();
    let mut counts = vec![1usize; n];
    for _ in 0..hops {
        counts = (0..n).map(|i| graph.neighbors(i).map(|j| counts[j]).sum()).collect();
    }
    counts.iter().sum()
}

/// Some node of the path lies in the given `(paragraph, sentence)`.
pub fn hit(path: &ReasoningPath, sentence: (usize, usize), graph: &EntityGraph) -> bool {
    path.nodes.iter().any(|&i| {
        let m = &graph.nodes[i];
        m.paragraph_index == sentence.0 && m.sentence_index == Some(sentence.1)
    })
}

/// Everything ESP needs for one example.
#[derive(Clone, Debug)]
pub struct ChainCase {
    pub graph: EntityGraph,
    pub supporting_facts: Vec<(usize, usize)>,
    /// Best paths first; at least `max(k)` long when enough walks exist.
    pub paths: Vec<ReasoningPath>,
    /// Every supporting sentence holds at least one node.
    pub good: bool,
}

impl ChainCase {
    /// Supporting sentences hit by the first `k` paths.
    pub fn hits(&self, k: usize) -> usize {
        let facts: BTreeSet<(usize, usize)> = self.supporting_facts.iter().copied().collect();
        facts
            .iter()
            .filter(|&&f| self.paths.iter().take(k).any(|p| hit(p, f, &self.graph)))
            .count()
    }

    pub fn num_facts(&self) -> usize {
        self.supporting_facts.iter().collect::<BTreeSet<_>>().len()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EspReport {
    pub ks: Vec<usize>,
    pub esp_em: Vec<f64>,
    pub esp_recall: Vec<f64>,
    pub n_good_cases: usize,
    pub missing_support_ratio: f64,
}

pub fn esp_report(cases: &[ChainCase], ks: &[usize]) -> EspReport {
    let good: Vec<&ChainCase> = cases.iter().filter(|c| c.good && c.num_facts() > 0).collect();
    let n = good.len();
    let mut esp_em = Vec::with_capacity(ks.len());
    let mut esp_recall = Vec::with_capacity(ks.len());
    for &k in ks {
        let (mut em, mut recall) = (0.0, 0.0);
        for c in &good {
            let h = c.hits(k);
            let m = c.num_facts();
            if h == m {
                em += 1.0;
            }
            recall += h as f64 / m as f64;
        }
        let denom = n.max(1) as f64;
        esp_em.push(em / denom);
        esp_recall.push(recall / denom);
    }
    let missing = cases.iter().filter(|c| !c.good).count();
    EspReport {
        ks: ks.to_vec(),
        esp_em,
        esp_recall,
        n_good_cases: n,
        missing_support_ratio: if cases.is_empty() {
            0.0
        } else {
            missing as f64 / cases.len() as f64
        },
    }
}

impl EspReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,esp_em,esp_recall,n_good_cases,missing_support_ratio\n");
        for (i, k) in self.ks.iter().enumerate() {
            out.push_str(&format!(
                "{k},{:.6},{:.6},{},{:.6}\n",
                self.esp_em[i], self.esp_recall[i], self.n_good_cases, self.missing_support_ratio
            ));
        }
        out
    }

    /// Grouped bar chart of EM and recall against `k`.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (120.0 * self.ks.len().max(1) as f64 + 60.0, 240.0, 30.0);
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let plot_h = h - 2.0 * pad;
        out.push_str(&format!(
            "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x2}\" y2=\"{y}\" stroke=\"black\"/>\n",
            y = h - pad,
            x2 = w - 10.0
        ));
        for (i, k) in self.ks.iter().enumerate() {
            let x0 = pad + 20.0 + 120.0 * i as f64;
            for (j, (v, color)) in [(self.esp_em[i], "#4a78b5"), (self.esp_recall[i], "#d9843b")].iter().enumerate() {
                let bh = v.clamp(0.0, 1.0) * plot_h;
                out.push_str(&format!(
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"36\" height=\"{bh:.1}\" fill=\"{color}\"/>\n",
                    x = x0 + 40.0 * j as f64,
                    y = h - pad - bh
                ));
                out.push_str(&format!(
                    "<text x=\"{x:.1}\" y=\"{y:.1}\">{v:.2}</text>\n",
                    x = x0 + 40.0 * j as f64 + 2.0,
                    y = h - pad - bh - 3.0
                ));
            }
            out.push_str(&format!("<text x=\"{x:.1}\" y=\"{y}\">k={k}</text>\n", x = x0 + 24.0, y = h - 10.0));
        }
        out.push_str(&format!(
            "<text x=\"{pad}\" y=\"16\"><tspan fill=\"#4a78b5\">ESP EM</tspan> / <tspan fill=\"#d9843b\">ESP Recall</tspan></text>\n"
        ));
        out.push_str("</svg>\n");
        out
    }
}
