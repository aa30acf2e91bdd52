//! Each component against an independent brute-force implementation on
//! random small instances (at most 8 nodes and 40 tokens). Shared by the
//! oracle tests and the acceptance run.

use std::collections::{BTreeSet, HashSet};

use dfgn::chains::{count_walks, esp_report, path_score, top_k_paths, ChainCase, HopScores};
use dfgn::context::Context;
use dfgn::data::{Answer, Paragraph, QaExample};
use dfgn::fusion::{self, AttentionVars, LEAKY_SLOPE};
use dfgn::graph::{recognize, EdgeKinds, EntityGraph, EntityMention, Gazetteer};
use dfgn::predictor::{bfs_masks, decode_answer, Decoded};
use dfgn::tensor::{Tape, Tensor};
use dfgn::Dropout;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{rng, uniform};

const INSTANCES: u64 = 30;
const MAX_NODES: usize = 8;
const TOL: f64 = 1e-9;

const WORDS: [&str; 7] = ["a", "b", "c", "d", "x", "y", "z"];

fn words(r: &mut impl Rng, lo: usize, hi: usize) -> Vec<String> {
    let n = r.gen_range(lo..=hi);
    (0..n).map(|_| WORDS.choose(r).unwrap().to_string()).collect()
}

/// Random example of at most 40 tokens and a random gazetteer over the same
/// small alphabet, so mentions, repeats and overlaps are common.
fn instance(seed: u64) -> (QaExample, Vec<String>) {
    let mut r = rng(seed);
    let n_par = r.gen_range(2..=3);
    let paragraphs: Vec<Paragraph> = (0..n_par)
        .map(|_| Paragraph {
            title: words(&mut r, 1, 2),
            sentences: (0..r.gen_range(1..=3)).map(|_| words(&mut r, 2, 4)).collect(),
        })
        .collect();
    let mut surfaces: Vec<String> = (0..r.gen_range(2..=4)).map(|_| words(&mut r, 1, 2).join(" ")).collect();
    surfaces.sort();
    surfaces.dedup();
    let mut facts = Vec::new();
    for (p, par) in paragraphs.iter().enumerate() {
        if r.gen_bool(0.6) {
            facts.push((p, r.gen_range(0..par.sentences.len())));
        }
    }
    if facts.is_empty() {
        facts.push((0, 0));
    }
    let ex = QaExample {
        id: format!("oracle-{seed}"),
        question: words(&mut r, 3, 5),
        paragraphs,
        supporting_facts: facts,
        answer: Answer::Yes,
        gold_chain: None,
    };
    (ex, surfaces)
}

fn context_of(ex: &QaExample) -> Context {
    let kept: Vec<usize> = (0..ex.paragraphs.len()).collect();
    let c = Context::assemble(ex, &kept);
    assert!(c.len() <= 40);
    c
}

/// Every in-segment substring that is a surface, then leftmost-longest
/// non-overlapping filtering.
fn oracle_mentions(ctx: &Context, surfaces: &[String]) -> Vec<(usize, Option<usize>, usize, usize)> {
    let set: HashSet<Vec<String>> = surfaces
        .iter()
        .map(|s| s.split(' ').map(str::to_string).collect())
        .collect();
    let mut out = Vec::new();
    for seg in &ctx.segments {
        let mut cands = Vec::new();
        for s in seg.start..seg.end {
            for e in s + 1..=seg.end {
                let sub: Vec<String> = ctx.tokens[s..e].iter().map(|t| t.to_lowercase()).collect();
                if set.contains(&sub) {
                    cands.push((s, e));
                }
            }
        }
        cands.sort_by(|a, b| a.0.cmp(&b.0).then((b.1 - b.0).cmp(&(a.1 - a.0))));
        let mut end = seg.start;
        for (s, e) in cands {
            if s >= end {
                out.push((seg.paragraph, seg.sentence, s, e));
                end = e;
            }
        }
    }
    out
}

fn build(seed: u64) -> (QaExample, Context, Vec<EntityMention>, EntityGraph) {
    let (ex, surfaces) = instance(seed);
    let ctx = context_of(&ex);
    let mentions = recognize(&ctx, &Gazetteer::new(&surfaces));
    let graph = EntityGraph::build(&mentions, &ctx, MAX_NODES);
    (ex, ctx, mentions, graph)
}

pub fn mentions_match_substring_scan() {
    for seed in 0..INSTANCES {
        let (ex, surfaces) = instance(seed);
        let ctx = context_of(&ex);
        let got: Vec<_> = recognize(&ctx, &Gazetteer::new(&surfaces))
            .iter()
            .map(|m| (m.paragraph_index, m.sentence_index, m.span.0, m.span.1))
            .collect();
        assert_eq!(got, oracle_mentions(&ctx, &surfaces), "seed {seed}");
    }
}

pub fn graph_matches_rule_by_rule_construction() {
    let mut sizes = BTreeSet::new();
    for seed in 0..INSTANCES {
        let (_, ctx, mentions, graph) = build(seed);
        let nodes: Vec<&EntityMention> = mentions.iter().take(MAX_NODES).collect();
        let n = nodes.len();
        assert_eq!(graph.len(), n);
        sizes.insert(n);
        for i in 0..n {
            for j in 0..n {
                let (a, b) = (nodes[i], nodes[j]);
                let mut want = EdgeKinds::default();
                if i != j {
                    if a.paragraph_index == b.paragraph_index && a.sentence_index == b.sentence_index {
                        want.insert(EdgeKinds::SENTENCE);
                    }
                    if a.surface == b.surface {
                        want.insert(EdgeKinds::CONTEXT);
                    }
                    for &p in &ctx.kept {
                        // the central node is the first title mention of p
                        let central = (0..n).find(|&k| nodes[k].paragraph_index == p && nodes[k].sentence_index.is_none());
                        if let Some(c) = central {
                            let pair = (i == c && b.paragraph_index == p) || (j == c && a.paragraph_index == p);
                            if pair {
                                want.insert(EdgeKinds::PARAGRAPH);
                            }
                        }
                    }
                }
                assert_eq!(graph.edge(i, j), want, "seed {seed} edge ({i},{j})");
            }
        }
        // brute-force edge count behind the degree statistic
        let s = graph.stats();
        let undirected = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| graph.adjacent(i, j)).count();
        assert_eq!(s.n_edges, undirected);
        if n > 0 {
            assert!((s.mean_degree - 2.0 * undirected as f64 / n as f64).abs() < TOL);
        }
    }
    assert!(sizes.len() > 3, "instances should vary in size: {sizes:?}");
}

pub fn binding_matrix_matches_span_membership() {
    for seed in 0..INSTANCES {
        let (_, ctx, _, graph) = build(seed);
        let m = ctx.len();
        let b = graph.binding_matrix(m).unwrap();
        for i in 0..m {
            for (j, node) in graph.nodes.iter().enumerate() {
                assert_eq!(b.get(i, j), node.span.0 <= i && i < node.span.1, "seed {seed} ({i},{j})");
            }
        }
    }
}

pub fn tok2ent_matches_per_entity_loop() {
    for seed in 0..INSTANCES {
        let (_, ctx, _, graph) = build(seed);
        if graph.is_empty() {
            continue;
        }
        let m = ctx.len();
        let d = 3;
        let c = uniform(&mut rng(seed + 1000), &[m, d]);
        let input = fusion::GraphInput::new(&graph, m).unwrap();
        let mut tape = Tape::new();
        let cv = tape.constant(c.clone()).unwrap();
        let ev = fusion::tok2ent(&mut tape, cv, &input.spans).unwrap();
        let e = tape.value(ev).clone();
        for (j, node) in graph.nodes.iter().enumerate() {
            for k in 0..d {
                let col: Vec<f64> = (node.span.0..node.span.1).map(|i| c.get(i, k)).collect();
                let mean = col.iter().sum::<f64>() / col.len() as f64;
                let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!((e.get(j, k) - mean).abs() < TOL, "seed {seed}");
                assert!((e.get(j, d + k) - max).abs() < TOL, "seed {seed}");
            }
        }
    }
}

struct AttentionOracle {
    alpha: Vec<Vec<f64>>,
    /// `ReLU(Σ_j α_ji h_j)`, the column aggregation.
    e_out: Vec<Vec<f64>>,
    /// `ReLU(Σ_j α_ij h_j)`, standard row aggregation, for contrast.
    e_rowwise: Vec<Vec<f64>>,
}

/// Direct double loops over nodes.
fn attention_oracle(e: &Tensor, adj: &[bool], u: &Tensor, b: &Tensor, w: &Tensor) -> AttentionOracle {
    let n = e.rows();
    let (din, d) = (u.rows(), u.cols());
    let h: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..d).map(|c| b.data()[c] + (0..din).map(|k| e.get(i, k) * u.get(k, c)).sum::<f64>()).collect())
        .collect();
    let leaky = |x: f64| if x > 0.0 { x } else { LEAKY_SLOPE * x };
    let mut alpha = vec![vec![0.0; n]; n];
    for i in 0..n {
        let nbrs: Vec<usize> = (0..n).filter(|&j| adj[i * n + j]).collect();
        if nbrs.is_empty() {
            continue;
        }
        let beta: Vec<f64> = nbrs
            .iter()
            .map(|&j| {
                let s: f64 = (0..d).map(|c| w.get(c, 0) * h[i][c] + w.get(c, 1) * h[j][c]).sum();
                leaky(s)
            })
            .collect();
        let mx = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = beta.iter().map(|x| (x - mx).exp()).sum();
        for (k, &j) in nbrs.iter().enumerate() {
            alpha[i][j] = (beta[k] - mx).exp() / z;
        }
    }
    let agg = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..d).map(|c| (0..n).map(|j| f(i, j) * h[j][c]).sum::<f64>().max(0.0)).collect())
            .collect()
    };
    let e_out = agg(&|i, j| alpha[j][i]);
    let e_rowwise = agg(&|i, j| alpha[i][j]);
    AttentionOracle { alpha, e_out, e_rowwise }
}

fn run_attention(e: &Tensor, adj: &[bool], u: &Tensor, b: &Tensor, w: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let ev = tape.constant(e.clone()).unwrap();
    let params = AttentionVars {
        u: tape.constant(u.clone()).unwrap(),
        b: tape.constant(b.clone()).unwrap(),
        w: tape.constant(w.clone()).unwrap(),
    };
    let out = fusion::graph_attention(&mut tape, ev, adj, params, 0.5, &mut Dropout::eval()).unwrap();
    (tape.value(out.alpha).clone(), tape.value(out.e_out).clone())
}

pub fn graph_attention_matches_double_loop() {
    let mut checked = 0;
    for seed in 0..INSTANCES {
        let (_, _, _, graph) = build(seed);
        let n = graph.len();
        if n == 0 {
            continue;
        }
        let mut r = rng(seed + 2000);
        let d = 3;
        let (e, u, b, w) = (
            uniform(&mut r, &[n, 2 * d]),
            uniform(&mut r, &[2 * d, d]),
            uniform(&mut r, &[d]),
            uniform(&mut r, &[d, 2]),
        );
        let adj = graph.adjacency();
        let (alpha, e_out) = run_attention(&e, &adj, &u, &b, &w);
        let o = attention_oracle(&e, &adj, &u, &b, &w);
        for i in 0..n {
            for j in 0..n {
                assert!((alpha.get(i, j) - o.alpha[i][j]).abs() < TOL, "seed {seed} alpha ({i},{j})");
            }
            for c in 0..d {
                assert!((e_out.get(i, c) - o.e_out[i][c]).abs() < TOL, "seed {seed} e_out ({i},{c})");
            }
        }
        checked += 1;
    }
    assert!(checked >= 20);
}

pub fn aggregation_is_transposed_not_rowwise() {
    // path 0 - 1 - 2: node 1 has two neighbors, the ends one each
    let n = 3;
    let mut adj = vec![false; 9];
    for (i, j) in [(0, 1), (1, 2)] {
        adj[i * n + j] = true;
        adj[j * n + i] = true;
    }
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 1.0]]).unwrap();
    let u = Tensor::from_rows(&[vec![1.0], vec![0.5]]).unwrap();
    let b = Tensor::vector(vec![0.1]);
    let w = Tensor::from_rows(&[vec![1.0, -0.7]]).unwrap();
    let (_, e_out) = run_attention(&e, &adj, &u, &b, &w);
    let o = attention_oracle(&e, &adj, &u, &b, &w);
    for i in 0..n {
        assert!((e_out.get(i, 0) - o.e_out[i][0]).abs() < TOL);
    }
    let differs = (0..n).any(|i| (o.e_out[i][0] - o.e_rowwise[i][0]).abs() > 1e-3);
    assert!(differs, "column and row aggregation coincide: {:?} vs {:?}", o.e_out, o.e_rowwise);
    let ours_rowwise = (0..n).all(|i| (e_out.get(i, 0) - o.e_rowwise[i][0]).abs() < 1e-3);
    assert!(!ours_rowwise);
}

fn random_hop_scores(r: &mut impl Rng, graph: &EntityGraph, hops: usize, coarse: bool) -> HopScores {
    let n = graph.len();
    let mut scores = HopScores::default();
    for _ in 0..hops {
        // coarse values produce exact ties
        let draw = |r: &mut dyn rand::RngCore| {
            if coarse {
                [0.25, 0.5, 0.75][r.gen_range(0..3)]
            } else {
                r.gen_range(0.01..0.99)
            }
        };
        scores.masks.push((0..n).map(|_| draw(r)).collect());
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in graph.neighbors(i) {
                a.data_mut()[i * n + j] = draw(r);
            }
        }
        scores.alphas.push(a);
    }
    scores
}

/// All `(hops + 1)`-tuples of nodes, filtered to walks, sorted by score then
/// node sequence.
fn enumerate_paths(graph: &EntityGraph, scores: &HopScores) -> Vec<(Vec<usize>, f64)> {
    let n = graph.len();
    let t = scores.hops();
    let total = n.pow(t as u32 + 1);
    let mut out = Vec::new();
    for code in 0..total {
        let mut nodes = Vec::with_capacity(t + 1);
        let mut c = code;
        for _ in 0..=t {
            nodes.push(c % n);
            c /= n;
        }
        nodes.reverse();
        if !nodes.windows(2).all(|w| graph.adjacent(w[0], w[1])) {
            continue;
        }
        let mut score = 1.0;
        for i in 0..t {
            score *= scores.masks[i][nodes[i]] * scores.alphas[i].get(nodes[i], nodes[i + 1]);
        }
        out.push((nodes, score));
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn top_k_matches_enumeration() {
    let mut checked = 0;
    for seed in 0..INSTANCES {
        let (_, _, _, graph) = build(seed);
        if graph.is_empty() {
            continue;
        }
        for hops in 1..=2 {
            let coarse = seed % 2 == 0;
            let scores = random_hop_scores(&mut rng(seed + 3000), &graph, hops, coarse);
            let all = enumerate_paths(&graph, &scores);
            assert_eq!(count_walks(&graph, hops), all.len(), "seed {seed}");
            for k in [1, 2, 5, 10] {
                let got = top_k_paths(&graph, &scores, k);
                assert_eq!(got.len(), k.min(all.len()));
                for (p, (nodes, score)) in got.iter().zip(&all) {
                    assert_eq!(&p.nodes, nodes, "seed {seed} hops {hops} k {k}");
                    assert!((p.score - score).abs() < TOL);
                    assert!((path_score(&graph, &p.nodes, &scores).unwrap() - score).abs() < TOL);
                }
            }
        }
        checked += 1;
    }
    assert!(checked >= 20);
}

/// Levels from powers of the adjacency matrix: `R_t` is the set reachable in
/// at most `t` steps, and level `t` is `R_t \ R_{t-1}`.
fn bfs_oracle(graph: &EntityGraph, start: &[bool], hops: usize) -> Vec<Vec<bool>> {
    let n = graph.len();
    let mut reach = vec![vec![false; n]; n];
    for (i, row) in reach.iter_mut().enumerate() {
        row[i] = true;
    }
    let step = |r: &Vec<Vec<bool>>| -> Vec<Vec<bool>> {
        // (I + A) · R over the boolean semiring
        (0..n)
            .map(|i| (0..n).map(|j| r[i][j] || (0..n).any(|k| graph.adjacent(i, k) && r[k][j])).collect())
            .collect()
    };
    let within = |r: &Vec<Vec<bool>>| -> Vec<bool> { (0..n).map(|j| (0..n).any(|i| start[i] && r[i][j])).collect() };
    let mut levels = vec![start.to_vec()];
    let mut prev = within(&reach);
    while levels.len() < hops {
        reach = step(&reach);
        let now = within(&reach);
        levels.push((0..n).map(|j| now[j] && !prev[j]).collect());
        prev = now;
    }
    levels
}

pub fn bfs_masks_match_matrix_powers() {
    let mut checked = 0;
    for seed in 0..INSTANCES {
        let (ex, _, _, graph) = build(seed);
        // the question mentions the first node's surface in half the cases
        let mut question = ex.question.clone();
        if seed % 2 == 0 && !graph.is_empty() {
            question.extend(graph.nodes[0].surface.iter().cloned());
        }
        let start: Vec<bool> = graph
            .nodes
            .iter()
            .map(|m| question.windows(m.surface.len()).any(|w| w == m.surface.as_slice()))
            .collect();
        for hops in 1..=3 {
            let got = bfs_masks(&graph, &question, hops);
            assert_eq!(got.start, start, "seed {seed}");
            if start.iter().any(|&b| b) {
                assert!(!got.skip_weak);
                assert_eq!(got.bfs, bfs_oracle(&graph, &start, hops), "seed {seed} hops {hops}");
                checked += 1;
            } else {
                assert!(got.skip_weak && got.bfs.is_empty());
            }
        }
    }
    assert!(checked >= 20, "{checked}");
}

pub fn bfs_levels_are_tree_distances() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed + 4000);
        let n = r.gen_range(2..=MAX_NODES);
        // random tree: each node attaches to an earlier one
        let pairs: Vec<(usize, usize)> = (1..n).map(|j| (r.gen_range(0..j), j)).collect();
        let graph = EntityGraph::from_adjacency(n, &pairs);
        let root = r.gen_range(0..n);
        let question = graph.nodes[root].surface.clone();
        let masks = bfs_masks(&graph, &question, n);
        // distances by repeated relaxation
        let mut dist = vec![usize::MAX; n];
        dist[root] = 0;
        for _ in 0..n {
            for &(a, b) in &pairs {
                if dist[a] != usize::MAX {
                    dist[b] = dist[b].min(dist[a] + 1);
                }
                if dist[b] != usize::MAX {
                    dist[a] = dist[a].min(dist[b] + 1);
                }
            }
        }
        for (t, level) in masks.bfs.iter().enumerate() {
            for j in 0..n {
                assert_eq!(level[j], dist[j] == t, "seed {seed} level {t} node {j}");
            }
        }
    }
}

pub fn esp_matches_membership_scan() {
    let ks = [1, 2, 5, 10];
    let mut cases = Vec::new();
    for seed in 0..INSTANCES {
        let (ex, _, _, graph) = build(seed);
        if graph.is_empty() {
            continue;
        }
        let scores = random_hop_scores(&mut rng(seed + 5000), &graph, 2, false);
        cases.push(ChainCase {
            good: !graph.missing_support(&ex),
            supporting_facts: ex.supporting_facts.clone(),
            paths: top_k_paths(&graph, &scores, 10),
            graph,
        });
    }
    assert!(cases.len() >= 20);
    let report = esp_report(&cases, &ks);

    let good: Vec<&ChainCase> = cases
        .iter()
        .filter(|c| {
            // good: every supporting sentence contains some node
            c.supporting_facts.iter().all(|&(p, s)| {
                c.graph.nodes.iter().any(|m| m.paragraph_index == p && m.sentence_index == Some(s))
            })
        })
        .collect();
    assert_eq!(report.n_good_cases, good.len());
    let missing = (cases.len() - good.len()) as f64 / cases.len() as f64;
    assert!((report.missing_support_ratio - missing).abs() < TOL);
    for (ki, &k) in ks.iter().enumerate() {
        let (mut em, mut recall) = (0.0, 0.0);
        for c in &good {
            let facts: BTreeSet<(usize, usize)> = c.supporting_facts.iter().copied().collect();
            let mut h = 0;
            for &(p, s) in &facts {
                let mut found = false;
                for path in c.paths.iter().take(k) {
                    for &node in &path.nodes {
                        let m = &c.graph.nodes[node];
                        if m.paragraph_index == p && m.sentence_index == Some(s) {
                            found = true;
                        }
                    }
                }
                h += usize::from(found);
            }
            em += f64::from(u8::from(h == facts.len()));
            recall += h as f64 / facts.len() as f64;
        }
        let n = good.len().max(1) as f64;
        assert!((report.esp_em[ki] - em / n).abs() < TOL, "k {k}");
        assert!((report.esp_recall[ki] - recall / n).abs() < TOL, "k {k}");
    }
}

pub fn decode_matches_quadratic_scan() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed + 6000);
        let m = r.gen_range(1..=40);
        let max_span = r.gen_range(1..=6);
        // integer logits so ties occur
        let start: Vec<f64> = (0..m).map(|_| f64::from(r.gen_range(-3..4))).collect();
        let end: Vec<f64> = (0..m).map(|_| f64::from(r.gen_range(-3..4))).collect();
        let type_logits: Vec<f64> = (0..3).map(|_| f64::from(r.gen_range(0..3))).collect();

        let mut t_best = 0;
        for c in 1..3 {
            if type_logits[c] > type_logits[t_best] {
                t_best = c;
            }
        }
        let want = match t_best {
            1 => Decoded::Yes,
            2 => Decoded::No,
            _ => {
                let mut best: Option<(f64, usize, usize)> = None;
                for i in 0..m {
                    for j in 0..m {
                        if j < i || j - i >= max_span {
                            continue;
                        }
                        let s = start[i] + end[j];
                        if best.is_none_or(|(bs, _, _)| s > bs) {
                            best = Some((s, i, j));
                        }
                    }
                }
                let (_, i, j) = best.unwrap();
                Decoded::Span(i, j)
            }
        };
        assert_eq!(decode_answer(&start, &end, &type_logits, max_span), want, "seed {seed}");
        // span decoding proper, with the type head forced to "span"
        let forced = decode_answer(&start, &end, &[1.0, 0.0, 0.0], max_span);
        let Decoded::Span(i, j) = forced else { panic!("expected a span") };
        assert!(i <= j && j - i < max_span && j < m);
        for a in 0..m {
            for b in a..m.min(a + max_span) {
                assert!(start[a] + end[b] <= start[i] + end[j]);
            }
        }
    }
}

pub const ALL: [(&str, fn()); 11] = [
    ("mentions_match_substring_scan", mentions_match_substring_scan),
    ("graph_matches_rule_by_rule_construction", graph_matches_rule_by_rule_construction),
    ("binding_matrix_matches_span_membership", binding_matrix_matches_span_membership),
    ("tok2ent_matches_per_entity_loop", tok2ent_matches_per_entity_loop),
    ("graph_attention_matches_double_loop", graph_attention_matches_double_loop),
    ("aggregation_is_transposed_not_rowwise", aggregation_is_transposed_not_rowwise),
    ("top_k_matches_enumeration", top_k_matches_enumeration),
    ("bfs_masks_match_matrix_powers", bfs_masks_match_matrix_powers),
    ("bfs_levels_are_tree_distances", bfs_levels_are_tree_distances),
    ("esp_matches_membership_scan", esp_matches_membership_scan),
    ("decode_matches_quadratic_scan", decode_matches_quadratic_scan),
];
