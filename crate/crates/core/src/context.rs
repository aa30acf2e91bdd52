//! Concatenated passage built from selected paragraphs, with an offset map back
//! to the original `(paragraph, sentence, token)` coordinates.

use serde::Serialize;

use crate::data::QaExample;

/// A contiguous run of context tokens: a paragraph title or one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Segment {
    /// Index of the paragraph in the original example.
    pub paragraph: usize,
    /// `None` for the title.
    pub sentence: Option<usize>,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Context {
    pub tokens: Vec<String>,
    pub segments: Vec<Segment>,
    /// Original indices of the kept paragraphs, in order.
    pub kept: Vec<usize>,
}

impl Context {
    /// Concatenates the given paragraphs (title first, then sentences).
    pub fn assemble(example: &QaExample, kept: &[usize]) -> Self {
        let mut tokens = Vec::new();
        let mut segments = Vec::new();
        for &pi in kept {
            let p = &example.paragraphs[pi];
            let parts = std::iter::once((None, &p.title)).chain(p.sentences.iter().enumerate().map(|(s, t)| (Some(s), t)));
            for (sentence, toks) in parts {
                if toks.is_empty() {
                    continue;
                }
                let start = tokens.len();
                tokens.extend(toks.iter().cloned());
                segments.push(Segment {
                    paragraph: pi,
                    sentence,
                    start,
                    end: tokens.len(),
                });
            }
        }
        Context {
            tokens,
            segments,
            kept: kept.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Sentence segments (titles excluded), in context order.
    pub fn sentences(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(|s| s.sentence.is_some())
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences().count()
    }

    /// Segment containing token `i`.
    pub fn segment_of(&self, i: usize) -> Option<&Segment> {
        let k = self.segments.partition_point(|s| s.end <= i);
        self.segments.get(k).filter(|s| s.start <= i)
    }

    /// Maps a context token back to `(paragraph, sentence, offset within segment)`.
    pub fn locate(&self, i: usize) -> Option<(usize, Option<usize>, usize)> {
        self.segment_of(i).map(|s| (s.paragraph, s.sentence, i - s.start))
    }

    /// Context range of an original sentence, if that sentence was kept.
    pub fn sentence_range(&self, paragraph: usize, sentence: usize) -> Option<(usize, usize)> {
        self.segments
            .iter()
            .find(|s| s.paragraph == paragraph && s.sentence == Some(sentence))
            .map(|s| (s.start, s.end))
    }

    /// Per-sentence support labels, 1.0 for supporting facts.
    pub fn support_labels(&self, example: &QaExample) -> Vec<f64> {
        self.sentences()
            .map(|s| {
                let key = (s.paragraph, s.sentence.expect("sentence segment"));
                if example.supporting_facts.contains(&key) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// First occurrence of `needle` inside a single sentence segment.
    pub fn find_in_sentences(&self, needle: &[String]) -> Option<(usize, usize)> {
        self.sentences().find_map(|s| {
            crate::data::find_subsequence(&self.tokens[s.start..s.end], needle)
                .map(|off| (s.start + off, s.start + off + needle.len()))
        })
    }
}
