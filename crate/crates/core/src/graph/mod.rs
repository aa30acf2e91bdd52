//! Entity recognition and entity-graph construction.
//!
//! Nodes are mention occurrences. Edges follow three rules: mentions sharing a
//! sentence, mentions with the same surface anywhere in the context, and a
//! paragraph's central (first title) mention to every other mention of that
//! paragraph.

mod ner;

pub use ner::{recognize, EntityMention, Gazetteer};

use serde::Serialize;

use crate::context::Context;
use crate::data::QaExample;
use crate::tensor::{Tensor, TensorError};

/// Default node cap.
pub const MAX_NODES: usize = 40;

/// Set of rules that produced an edge.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct EdgeKinds(u8);

impl EdgeKinds {
    pub const SENTENCE: EdgeKinds = EdgeKinds(1);
    pub const CONTEXT: EdgeKinds = EdgeKinds(2);
    pub const PARAGRAPH: EdgeKinds = EdgeKinds(4);

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, other: EdgeKinds) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn insert(&mut self, other: EdgeKinds) {
        self.0 |= other.0;
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntityGraph {
    pub nodes: Vec<EntityMention>,
    /// Symmetric `N × N`, row-major; empty kinds mean no edge.
    edges: Vec<EdgeKinds>,
    pub central_nodes: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct GraphStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub sentence_edges: usize,
    pub context_edges: usize,
    pub paragraph_edges: usize,
    pub mean_degree: f64,
}

impl EntityGraph {
    /// Builds the graph from mentions in document order, keeping at most
    /// `max_nodes` of them.
    pub fn build(mentions: &[EntityMention], context: &Context, max_nodes: usize) -> Self {
        let mut nodes: Vec<EntityMention> = mentions.iter().take(max_nodes).cloned().collect();
        for (i, m) in nodes.iter_mut().enumerate() {
            m.entity_index = i;
        }
        let n = nodes.len();
        let mut edges = vec![EdgeKinds::default(); n * n];
        let mut link = |i: usize, j: usize, kind: EdgeKinds| {
            if i != j {
                edges[i * n + j].insert(kind);
                edges[j * n + i].insert(kind);
            }
        };
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (&nodes[i], &nodes[j]);
                if a.paragraph_index == b.paragraph_index && a.sentence_index == b.sentence_index {
                    link(i, j, EdgeKinds::SENTENCE);
                }
                if a.surface == b.surface {
                    link(i, j, EdgeKinds::CONTEXT);
                }
            }
        }
        let mut central_nodes = Vec::new();
        for &p in &context.kept {
            let central = nodes
                .iter()
                .position(|m| m.paragraph_index == p && m.sentence_index.is_none());
            if let Some(c) = central {
                central_nodes.push(c);
                for j in 0..n {
                    if nodes[j].paragraph_index == p {
                        link(c, j, EdgeKinds::PARAGRAPH);
                    }
                }
            }
        }
        EntityGraph {
            nodes,
            edges,
            central_nodes,
        }
    }

    /// Graph with explicit adjacency, for tests and demos. Mentions get
    /// synthetic single-token spans.
    pub fn from_adjacency(n: usize, pairs: &[(usize, usize)]) -> Self {
        let nodes = (0..n)
            .map(|i| EntityMention {
                entity_index: i,
                paragraph_index: 0,
                sentence_index: Some(0),
                span: (i, i + 1),
                surface: vec![format!("e{i}")],
            })
            .collect();
        let mut edges = vec![EdgeKinds::default(); n * n];
        for &(i, j) in pairs {
            if i != j {
                edges[i * n + j].insert(EdgeKinds::SENTENCE);
                edges[j * n + i].insert(EdgeKinds::SENTENCE);
            }
        }
        EntityGraph {
            nodes,
            edges,
            central_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge(&self, i: usize, j: usize) -> EdgeKinds {
        self.edges[i * self.len() + j]
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        !self.edge(i, j).is_empty()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.adjacent(i, j))
    }

    /// Row-major boolean adjacency.
    pub fn adjacency(&self) -> Vec<bool> {
        self.edges.iter().map(|e| !e.is_empty()).collect()
    }

    pub fn stats(&self) -> GraphStats {
        let n = self.len();
        let mut s = GraphStats {
            n_nodes: n,
            ..GraphStats::default()
        };
        for i in 0..n {
            for j in i + 1..n {
                let e = self.edge(i, j);
                if e.is_empty() {
                    continue;
                }
                s.n_edges += 1;
                s.sentence_edges += e.contains(EdgeKinds::SENTENCE) as usize;
                s.context_edges += e.contains(EdgeKinds::CONTEXT) as usize;
                s.paragraph_edges += e.contains(EdgeKinds::PARAGRAPH) as usize;
            }
        }
        s.mean_degree = if n == 0 { 0.0 } else { 2.0 * s.n_edges as f64 / n as f64 };
        s
    }

    /// Nodes located in original sentence `(paragraph, sentence)`.
    pub fn nodes_in_sentence(&self, paragraph: usize, sentence: usize) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .filter(move |m| m.paragraph_index == paragraph && m.sentence_index == Some(sentence))
            .map(|m| m.entity_index)
    }

    /// True when some supporting sentence holds no node.
    pub fn missing_support(&self, example: &QaExample) -> bool {
        example
            .supporting_facts
            .iter()
            .any(|&(p, s)| self.nodes_in_sentence(p, s).next().is_none())
    }

    /// Boolean `context_length × N` incidence of tokens in node spans.
    pub fn binding_matrix(&self, context_length: usize) -> Result<BindingMatrix, TensorError> {
        BindingMatrix::new(&self.nodes, context_length)
    }
}

/// Token × node incidence: entry `(i, j)` is set iff token `i` lies in node `j`'s span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BindingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BindingMatrix {
    pub fn new(mentions: &[EntityMention], context_length: usize) -> Result<Self, TensorError> {
        let cols = mentions.len();
        let mut data = vec![false; context_length * cols];
        for (j, m) in mentions.iter().enumerate() {
            let (s, e) = m.span;
            if s >= e || e > context_length {
                return Err(TensorError::IndexOutOfRange {
                    index: e,
                    len: context_length,
                });
            }
            for i in s..e {
                data[i * cols + j] = true;
            }
        }
        Ok(BindingMatrix {
            rows: context_length,
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn column_sum(&self, j: usize) -> usize {
        (0..self.rows).filter(|&i| self.get(i, j)).count()
    }

    /// Row indices set in column `j`.
    pub fn column_rows(&self, j: usize) -> Vec<usize> {
        (0..self.rows).filter(|&i| self.get(i, j)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[self.rows, self.cols],
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("dims match")
    }
}

/// Fraction of examples with at least one supporting sentence holding no node.
pub fn missing_support_ratio(examples: &[QaExample], graphs: &[EntityGraph]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let missing = examples
        .iter()
        .zip(graphs)
        .filter(|(ex, g)| g.missing_support(ex))
        .count();
    missing as f64 / examples.len() as f64
}
