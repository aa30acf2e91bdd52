use std::collections::HashMap;

use super::QaExample;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Separator between question and passage in joint sequences.
pub const SEP: usize = 2;

const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<sep>"];

/// Token ↔ id map. Ids below [`Vocabulary::reserved`] are special tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }
}

impl Vocabulary {
    pub fn reserved() -> usize {
        RESERVED.len()
    }

    /// Every question, title and sentence token, in first-seen order.
    pub fn build(examples: &[QaExample]) -> Self {
        let mut v = Vocabulary::default();
        for ex in examples {
            v.extend(&ex.question);
            for p in &ex.paragraphs {
                v.extend(&p.title);
                for s in &p.sentences {
                    v.extend(s);
                }
            }
        }
        v
    }

    pub fn from_tokens(tokens: &[String]) -> Self {
        let mut v = Vocabulary::default();
        v.extend(tokens);
        v
    }

    fn extend(&mut self, tokens: &[String]) {
        for t in tokens {
            if !self.ids.contains_key(t) {
                self.ids.insert(t.clone(), self.tokens.len());
                self.tokens.push(t.clone());
            }
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }

    /// Non-reserved tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.tokens.get(i).cloned().unwrap_or_else(|| RESERVED[UNK].to_string()))
            .collect()
    }
}
