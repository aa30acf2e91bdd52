use std::collections::HashSet;

use serde::Serialize;

use crate::context::Context;

/// Set of entity surfaces matched by longest-match, case-insensitively.
#[derive(Clone, Debug, Default)]
pub struct Gazetteer {
    surfaces: HashSet<Vec<String>>,
    max_len: usize,
}

impl Gazetteer {
    /// Builds from space-separated surfaces. Empty surfaces are ignored.
    pub fn new<S: AsRef<str>>(surfaces: &[S]) -> Self {
        let mut g = Gazetteer::default();
        for s in surfaces {
            let toks: Vec<String> = s.as_ref().split_whitespace().map(str::to_lowercase).collect();
            if toks.is_empty() {
                continue;
            }
            g.max_len = g.max_len.max(toks.len());
            g.surfaces.insert(toks);
        }
        g
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn contains(&self, tokens: &[String]) -> bool {
        self.surfaces.contains(tokens)
    }

    /// Surfaces sorted, space-joined.
    pub fn surfaces(&self) -> Vec<String> {
        let mut v: Vec<String> = self.surfaces.iter().map(|s| s.join(" ")).collect();
        v.sort();
        v
    }

    /// Left-to-right, longest-first, non-overlapping matches as `[start, end)`.
    pub fn find(&self, tokens: &[String]) -> Vec<(usize, usize)> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        let mut out = Vec::new();
        let mut i = 0;
        while i < lower.len() {
            let longest = (1..=self.max_len.min(lower.len() - i))
                .rev()
                .find(|&n| self.surfaces.contains(&lower[i..i + n]));
            match longest {
                Some(n) => {
                    out.push((i, i + n));
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// One recognized entity occurrence; each occurrence is a graph node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntityMention {
    pub entity_index: usize,
    /// Original paragraph index.
    pub paragraph_index: usize,
    /// `None` when the mention sits in the paragraph title.
    pub sentence_index: Option<usize>,
    /// `[start, end)` in the concatenated context.
    pub span: (usize, usize),
    pub surface: Vec<String>,
}

impl EntityMention {
    pub fn surface_text(&self) -> String {
        self.surface.join(" ")
    }

    pub fn len(&self) -> usize {
        self.span.1 - self.span.0
    }

    pub fn is_empty(&self) -> bool {
        self.span.1 == self.span.0
    }
}

/// Recognizes mentions segment by segment so no match crosses a sentence or
/// title boundary. Mentions come out in document order.
pub fn recognize(context: &Context, gazetteer: &Gazetteer) -> Vec<EntityMention> {
    let mut out = Vec::new();
    for seg in &context.segments {
        for (s, e) in gazetteer.find(&context.tokens[seg.start..seg.end]) {
            let span = (seg.start + s, seg.start + e);
            out.push(EntityMention {
                entity_index: out.len(),
                paragraph_index: seg.paragraph,
                sentence_index: seg.sentence,
                span,
                surface: context.tokens[span.0..span.1].iter().map(|t| t.to_lowercase()).collect(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tokenize;

    #[test]
    fn no_surface_no_mentions() {
        let g = Gazetteer::new(&["fort river"]);
        assert!(g.find(&tokenize("the quick brown fox")).is_empty());
    }

    #[test]
    fn longest_match_wins() {
        let g = Gazetteer::new(&["fort river", "fort river bridge"]);
        assert_eq!(g.find(&tokenize("fort river bridge")), vec![(0, 3)]);
        assert_eq!(g.find(&tokenize("Fort RIVER is near")), vec![(0, 2)]);
    }

    #[test]
    fn matches_do_not_overlap() {
        let g = Gazetteer::new(&["a b", "b c"]);
        assert_eq!(g.find(&tokenize("a b c")), vec![(0, 2)]);
    }
}
