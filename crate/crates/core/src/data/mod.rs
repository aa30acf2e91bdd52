//! Dataset schema, JSON ingestion and validation.

mod synthetic;
mod vocab;

pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use vocab::{Vocabulary, PAD, SEP, UNK};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse dataset: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid examples: {}", format_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| format!("{} ({})", x.id, x.reason))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub title: Vec<String>,
    pub sentences: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Answer {
    Span { text: String },
    Yes,
    No,
}

impl Answer {
    /// Class index used by the answer-type head: span, yes, no.
    pub fn type_index(&self) -> usize {
        match self {
            Answer::Span { .. } => 0,
            Answer::Yes => 1,
            Answer::No => 2,
        }
    }

    pub fn text(&self) -> &str {
        match self {
            Answer::Span { text } => text,
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: String,
    pub question: Vec<String>,
    pub paragraphs: Vec<Paragraph>,
    /// `(paragraph_index, sentence_index)` pairs.
    pub supporting_facts: Vec<(usize, usize)>,
    pub answer: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_chain: Option<Vec<String>>,
}

/// Lowercased whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Position of the first contiguous occurrence of `needle` in `hay`.
pub fn find_subsequence(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

impl QaExample {
    pub fn supporting_paragraphs(&self) -> BTreeSet<usize> {
        self.supporting_facts.iter().map(|&(p, _)| p).collect()
    }

    /// All invariant violations of this example, as human-readable reasons.
    pub fn check(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.question.is_empty() {
            problems.push("empty question".to_string());
        }
        for (pi, p) in self.paragraphs.iter().enumerate() {
            if p.sentences.is_empty() {
                problems.push(format!("paragraph {pi} has no sentences"));
            }
            if let Some(si) = p.sentences.iter().position(Vec::is_empty) {
                problems.push(format!("paragraph {pi} sentence {si} is empty"));
            }
        }
        for &(p, s) in &self.supporting_facts {
            let ok = self.paragraphs.get(p).is_some_and(|para| s < para.sentences.len());
            if !ok {
                problems.push(format!("supporting fact ({p}, {s}) out of range"));
            }
        }
        if let Answer::Span { text } = &self.answer {
            let needle = tokenize(text);
            let found = self.paragraphs.iter().any(|p| {
                std::iter::once(&p.title)
                    .chain(&p.sentences)
                    .any(|s| find_subsequence(s, &needle).is_some())
            });
            if !found {
                problems.push(format!("answer span {text:?} not found in any paragraph"));
            }
        }
        if self.gold_chain.is_some() && self.supporting_paragraphs().len() < 2 {
            problems.push("multi-hop example needs supporting facts in two paragraphs".to_string());
        }
        problems
    }
}

/// Checks every example and collects all violations.
pub fn validate(examples: &[QaExample]) -> Result<(), DataError> {
    let violations: Vec<Violation> = examples
        .iter()
        .flat_map(|ex| {
            ex.check().into_iter().map(|reason| Violation {
                id: ex.id.clone(),
                reason,
            })
        })
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(DataError::Invalid(violations))
    }
}

pub fn parse_dataset(json: &str) -> Result<Vec<QaExample>, DataError> {
    let examples: Vec<QaExample> = serde_json::from_str(json)?;
    validate(&examples)?;
    Ok(examples)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QaExample>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

pub fn dataset_to_json(examples: &[QaExample]) -> String {
    serde_json::to_string_pretty(examples).expect("dataset serializes")
}

pub fn save_dataset(path: &Path, examples: &[QaExample]) -> Result<(), DataError> {
    std::fs::write(path, dataset_to_json(examples)).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
