//! Synthetic two-hop QA generator.
//!
//! Each example encodes a chain `A -rel1-> B -rel2-> C`. The first gold paragraph
//! is titled `A` and states `rel1(A, B)`; the second is titled `B` and states
//! `rel2(B, C)`. Distractors reuse the question's relations with other subjects
//! and mention overlapping entities, but never contain the answer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{find_subsequence, Answer, DataError, Paragraph, QaExample};

const PREFIXES: [&str; 24] = [
    "fort", "lake", "mount", "port", "saint", "new", "east", "west", "north", "south", "old", "upper",
    "lower", "royal", "grand", "little", "green", "red", "black", "white", "silver", "golden", "iron",
    "stone",
];

const HEADS: [&str; 24] = [
    "river", "bay", "hill", "rock", "field", "haven", "ridge", "vale", "creek", "harbor", "marsh",
    "grove", "point", "crest", "falls", "glen", "meadow", "cliff", "brook", "forest", "island",
    "canyon", "springs", "heights",
];

const SUFFIXES: [&str; 6] = ["bridge", "tower", "gate", "castle", "station", "abbey"];

const RELATIONS: [&str; 16] = [
    "mayor", "founder", "capital", "owner", "coach", "author", "director", "partner", "rival",
    "sponsor", "patron", "architect", "neighbor", "twin", "ally", "warden",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_examples: usize,
    /// Paragraphs per example, gold plus distractors.
    pub paragraphs_per_example: usize,
    pub hops: usize,
    pub distractors: usize,
    pub seed: u64,
    /// Fraction of examples asked as "is X the ... of A?".
    pub yes_no_fraction: f64,
    /// Numeric comparison questions are not generated; must stay 0.
    pub comparison_fraction: f64,
    /// Probability that a paragraph carries a second, non-supporting sentence.
    pub filler_prob: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_entities: 240,
            n_relations: 12,
            n_examples: 100,
            paragraphs_per_example: 10,
            hops: 2,
            distractors: 8,
            seed: 0,
            yes_no_fraction: 0.1,
            comparison_fraction: 0.0,
            filler_prob: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn check(&self) -> Result<(), DataError> {
        let fail = |m: String| Err(DataError::Infeasible(m));
        if self.hops != 2 {
            return fail(format!("only 2-hop chains are generated, got hops={}", self.hops));
        }
        if self.distractors + 2 != self.paragraphs_per_example {
            return fail(format!(
                "distractors ({}) + 2 gold paragraphs must equal paragraphs_per_example ({})",
                self.distractors, self.paragraphs_per_example
            ));
        }
        if self.comparison_fraction != 0.0 {
            return fail("comparison questions are not supported".into());
        }
        if !(0.0..=1.0).contains(&self.yes_no_fraction) || !(0.0..=1.0).contains(&self.filler_prob) {
            return fail("fractions must lie in [0, 1]".into());
        }
        if self.n_relations < 3 || self.n_relations > RELATIONS.len() {
            return fail(format!("n_relations must be in 3..={}", RELATIONS.len()));
        }
        let needed = 2 * self.paragraphs_per_example + 8;
        if self.n_entities < needed {
            return fail(format!(
                "{} entities cannot fill {} paragraphs without collisions (need {needed})",
                self.n_entities, self.paragraphs_per_example
            ));
        }
        if self.n_entities > PREFIXES.len() * HEADS.len() {
            return fail(format!("at most {} entities available", PREFIXES.len() * HEADS.len()));
        }
        Ok(())
    }

    /// The entity surfaces this spec draws from, space-joined. This is the
    /// gazetteer matching the generated data.
    pub fn entity_surfaces(&self) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut combos: Vec<(usize, usize)> = (0..PREFIXES.len())
            .flat_map(|p| (0..HEADS.len()).map(move |h| (p, h)))
            .collect();
        combos.shuffle(&mut rng);
        combos
            .into_iter()
            .take(self.n_entities)
            .enumerate()
            .map(|(i, (p, h))| {
                // every eighth entity gets a three-token surface
                if i % 8 == 7 {
                    format!("{} {} {}", PREFIXES[p], HEADS[h], SUFFIXES[i / 8 % SUFFIXES.len()])
                } else {
                    format!("{} {}", PREFIXES[p], HEADS[h])
                }
            })
            .collect()
    }

    pub fn relations(&self) -> &'static [&'static str] {
        &RELATIONS[..self.n_relations]
    }
}

fn words(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    entities: Vec<Vec<String>>,
    relations: &'a [&'static str],
    filler_prob: f64,
}

impl Builder<'_> {
    fn fact(&mut self, subject: &[String], rel: &str, object: &[String]) -> Vec<String> {
        let mut s = Vec::new();
        if self.rng.gen_bool(0.5) {
            s.extend(subject.iter().cloned());
            s.push("has".into());
            s.push(rel.into());
            s.extend(object.iter().cloned());
        } else {
            s.push("the".into());
            s.push(rel.into());
            s.push("of".into());
            s.extend(subject.iter().cloned());
            s.push("is".into());
            s.extend(object.iter().cloned());
        }
        s.push(".".into());
        s
    }

    /// Paragraph titled by `subject`; returns it with the index of the fact sentence.
    fn paragraph(&mut self, subject: usize, rel: &str, object: usize, banned: &[usize]) -> (Paragraph, usize) {
        let subj = self.entities[subject].clone();
        let fact = self.fact(&subj, rel, &self.entities[object].clone());
        let mut sentences = vec![fact];
        let mut fact_idx = 0;
        if self.rng.gen_bool(self.filler_prob) {
            let near = self.pick(&[&[subject, object], banned].concat());
            let mut filler = subj.clone();
            filler.extend(["is".to_string(), "near".to_string()]);
            filler.extend(self.entities[near].iter().cloned());
            filler.push(".".into());
            if self.rng.gen_bool(0.5) {
                sentences.push(filler);
            } else {
                sentences.insert(0, filler);
                fact_idx = 1;
            }
        }
        (
            Paragraph {
                title: subj,
                sentences,
            },
            fact_idx,
        )
    }

    fn pick(&mut self, exclude: &[usize]) -> usize {
        loop {
            let e = self.rng.gen_range(0..self.entities.len());
            if !exclude.contains(&e) {
                return e;
            }
        }
    }

    fn pick_relation(&mut self, exclude: &[&str]) -> &'static str {
        loop {
            let r = self.relations[self.rng.gen_range(0..self.relations.len())];
            if !exclude.contains(&r) {
                return r;
            }
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<QaExample>, DataError> {
    spec.check()?;
    let entities: Vec<Vec<String>> = spec.entity_surfaces().iter().map(|s| words(s)).collect();
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        entities,
        relations: spec.relations(),
        filler_prob: spec.filler_prob,
    };
    let mut out = Vec::with_capacity(spec.n_examples);
    for n in 0..spec.n_examples {
        let rel1 = b.pick_relation(&[]);
        let rel2 = b.pick_relation(&[rel1]);
        let a = b.pick(&[]);
        let bridge = b.pick(&[a]);
        // the answer must not occur inside any other surface used in this example
        let c = loop {
            let c = b.pick(&[a, bridge]);
            let c_toks = &b.entities[c];
            if find_subsequence(&b.entities[a], c_toks).is_none()
                && find_subsequence(&b.entities[bridge], c_toks).is_none()
            {
                break c;
            }
        };
        let c_toks = b.entities[c].clone();
        let contains_answer: Vec<usize> = (0..b.entities.len())
            .filter(|&e| find_subsequence(&b.entities[e], &c_toks).is_some())
            .collect();
        let mut banned = contains_answer.clone();
        banned.push(c);

        let (p1, f1) = b.paragraph(a, rel1, bridge, &banned);
        let (p2, f2) = b.paragraph(bridge, rel2, c, &banned);

        let mut paragraphs: Vec<(Paragraph, Option<usize>)> = vec![(p1, Some(f1)), (p2, Some(f2))];
        let mut hard_object = None;
        for k in 0..spec.distractors {
            let (rel, subject) = match k {
                0 => (rel2, b.pick(&[&banned[..], &[a, bridge]].concat())),
                1 => (rel1, b.pick(&[&banned[..], &[a, bridge]].concat())),
                _ => (b.pick_relation(&[rel1, rel2]), b.pick(&banned)),
            };
            let object = b.pick(&[&banned[..], &[subject]].concat());
            if k == 0 {
                hard_object = Some(object);
            }
            let (p, _) = b.paragraph(subject, rel, object, &banned);
            paragraphs.push((p, None));
        }
        paragraphs.shuffle(&mut b.rng);

        let supporting_facts: Vec<(usize, usize)> = paragraphs
            .iter()
            .enumerate()
            .filter_map(|(pi, (_, f))| f.map(|s| (pi, s)))
            .collect();

        let a_toks = b.entities[a].clone();
        let yes_no = b.rng.gen_bool(spec.yes_no_fraction);
        let (question, answer) = if yes_no {
            let say_yes = hard_object.is_none() || b.rng.gen_bool(0.5);
            let probe = if say_yes { c } else { hard_object.expect("checked above") };
            let mut q = vec!["is".to_string()];
            q.extend(b.entities[probe].iter().cloned());
            q.extend(words("the"));
            q.push(rel2.into());
            q.extend(words("linked to the"));
            q.push(rel1.into());
            q.push("of".into());
            q.extend(a_toks.iter().cloned());
            q.push("?".into());
            (q, if say_yes { Answer::Yes } else { Answer::No })
        } else {
            let mut q = vec!["which".to_string(), rel2.to_string()];
            q.extend(words("is linked to the"));
            q.push(rel1.into());
            q.push("of".into());
            q.extend(a_toks.iter().cloned());
            q.push("?".into());
            (
                q,
                Answer::Span {
                    text: c_toks.join(" "),
                },
            )
        };

        out.push(QaExample {
            id: format!("syn-{}-{n:05}", spec.seed),
            question,
            paragraphs: paragraphs.into_iter().map(|(p, _)| p).collect(),
            supporting_facts,
            answer,
            gold_chain: Some(vec![a_toks.join(" "), b.entities[bridge].join(" "), c_toks.join(" ")]),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{dataset_to_json, validate};

    fn spec(n: usize, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            n_examples: n,
            seed,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generated_examples_are_valid() {
        let data = generate_synthetic(&spec(200, 1)).unwrap();
        validate(&data).unwrap();
        for ex in &data {
            assert_eq!(ex.paragraphs.len(), 10);
            assert_eq!(ex.supporting_facts.len(), 2);
            assert_eq!(ex.supporting_paragraphs().len(), 2);
            assert_eq!(ex.gold_chain.as_ref().unwrap().len(), 3);
        }
    }

    #[test]
    fn answer_lives_in_second_gold_paragraph_only() {
        let data = generate_synthetic(&spec(200, 2)).unwrap();
        for ex in &data {
            let chain = ex.gold_chain.as_ref().unwrap();
            let answer = words(&chain[2]);
            let gold2 = ex
                .supporting_facts
                .iter()
                .map(|&(p, s)| &ex.paragraphs[p].sentences[s])
                .find(|s| find_subsequence(s, &answer).is_some());
            assert!(gold2.is_some(), "{}", ex.id);
            let gold: Vec<usize> = ex.supporting_paragraphs().into_iter().collect();
            for (pi, p) in ex.paragraphs.iter().enumerate() {
                let has = std::iter::once(&p.title)
                    .chain(&p.sentences)
                    .any(|s| find_subsequence(s, &answer).is_some());
                if !gold.contains(&pi) {
                    assert!(!has, "distractor {pi} of {} holds the answer", ex.id);
                }
            }
            if let Answer::Span { text } = &ex.answer {
                assert_eq!(text, &chain[2]);
            }
        }
    }

    #[test]
    fn no_distractors_means_every_paragraph_supports() {
        let s = SyntheticSpec {
            paragraphs_per_example: 2,
            distractors: 0,
            n_examples: 20,
            ..SyntheticSpec::default()
        };
        for ex in generate_synthetic(&s).unwrap() {
            assert_eq!(ex.supporting_paragraphs().len(), 2);
            assert_eq!(ex.paragraphs.len(), 2);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = dataset_to_json(&generate_synthetic(&spec(30, 9)).unwrap());
        let b = dataset_to_json(&generate_synthetic(&spec(30, 9)).unwrap());
        assert_eq!(a, b);
        let c = dataset_to_json(&generate_synthetic(&spec(30, 10)).unwrap());
        assert_ne!(a, c);
    }

    #[test]
    fn yes_no_fraction_is_respected() {
        let data = generate_synthetic(&spec(1000, 4)).unwrap();
        let yn = data.iter().filter(|e| !matches!(e.answer, Answer::Span { .. })).count();
        assert!((60..=140).contains(&yn), "{yn} yes/no questions");
        let none = generate_synthetic(&SyntheticSpec {
            yes_no_fraction: 0.0,
            ..spec(100, 4)
        })
        .unwrap();
        assert!(none.iter().all(|e| matches!(e.answer, Answer::Span { .. })));
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let bad = [
            SyntheticSpec {
                n_entities: 10,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                distractors: 3,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                hops: 3,
                ..SyntheticSpec::default()
            },
            SyntheticSpec {
                comparison_fraction: 0.2,
                ..SyntheticSpec::default()
            },
        ];
        for s in bad {
            assert!(matches!(generate_synthetic(&s), Err(DataError::Infeasible(_))));
        }
    }

    #[test]
    fn entity_surfaces_are_distinct_and_multi_token() {
        let s = SyntheticSpec::default().entity_surfaces();
        let set: std::collections::BTreeSet<_> = s.iter().collect();
        assert_eq!(set.len(), s.len());
        assert!(s.iter().all(|e| e.split(' ').count() >= 2));
        assert!(s.iter().any(|e| e.split(' ').count() == 3));
    }
}
