//! Browser demo. [`Session`] holds one synthetic example and a model (fresh
//! weights, or a checkpoint written by `dfgn train`); its three operations
//! return JSON for the page in `www/`.
//!
//! The logic lives in plain Rust so it is tested natively; the wasm-bindgen
//! layer only converts errors.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dfgn::chains::top_k_paths;
use dfgn::config::Config;
use dfgn::data::{generate_synthetic, QaExample, SyntheticSpec, Vocabulary};
use dfgn::graph::{EdgeKinds, Gazetteer};
use dfgn::model::Prepared;
use dfgn::pipeline::Pipeline;
use dfgn::tensor::Checkpoint;

/// Small enough to run a forward pass interactively.
fn demo_config() -> Config {
    Config {
        d1: 32,
        d2: 32,
        selector_dim: 16,
        ..Config::default()
    }
}

fn demo_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        n_examples: 1,
        paragraphs_per_example: 6,
        distractors: 4,
        seed,
        ..SyntheticSpec::default()
    }
}

#[derive(Serialize)]
struct NodeView {
    id: usize,
    surface: String,
    paragraph: usize,
    /// `None` for title mentions.
    sentence: Option<usize>,
    span: (usize, usize),
    central: bool,
}

#[derive(Serialize)]
struct EdgeView {
    source: usize,
    target: usize,
    kinds: Vec<&'static str>,
}

#[derive(Serialize)]
struct ExampleView<'a> {
    example: &'a QaExample,
    kept: &'a [usize],
    tokens: &'a [String],
    nodes: Vec<NodeView>,
    edges: Vec<EdgeView>,
    mean_degree: f64,
    missing_support: bool,
    trained: bool,
}

#[derive(Serialize)]
struct HopView {
    mask: Vec<f64>,
    /// Row-major `N × N`.
    alpha: Vec<f64>,
    bfs_target: Option<Vec<bool>>,
}

#[derive(Serialize)]
struct ReasonView {
    answer: String,
    gold_answer: String,
    support: Vec<(usize, usize)>,
    hops: Vec<HopView>,
}

#[derive(Serialize)]
struct PathView {
    nodes: Vec<usize>,
    surfaces: Vec<String>,
    score: f64,
}

#[derive(Serialize)]
struct PathsView {
    n_walks: usize,
    paths: Vec<PathView>,
    gold_chain: Option<Vec<String>>,
}

#[derive(Debug)]
pub struct DemoError(String);

impl std::fmt::Display for DemoError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(e: impl std::fmt::Display) -> DemoError {
    DemoError(e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("demo views serialize")
}

pub struct Session {
    pipeline: Pipeline,
    trained: bool,
    example: QaExample,
    prepared: Prepared,
}

impl Session {
    /// Untrained model over the generator's entity surfaces.
    pub fn new(seed: u64) -> Result<Self, DemoError> {
        let example = Self::generate(seed)?;
        let spec = demo_spec(seed);
        let gazetteer = Gazetteer::new(&spec.entity_surfaces());
        let mut words: Vec<String> = spec.entity_surfaces().iter().flat_map(|s| dfgn::data::tokenize(s)).collect();
        words.extend(spec.relations().iter().flat_map(|s| dfgn::data::tokenize(s)));
        words.extend(Vocabulary::build(std::slice::from_ref(&example)).words().iter().cloned());
        let vocab = Vocabulary::from_tokens(&words);
        let pipeline = Pipeline::new(demo_config(), vocab, gazetteer).map_err(err)?;
        let prepared = pipeline.prepare(&example).map_err(err)?;
        Ok(Session {
            pipeline,
            trained: false,
            example,
            prepared,
        })
    }

    fn generate(seed: u64) -> Result<QaExample, DemoError> {
        generate_synthetic(&demo_spec(seed))
            .map_err(err)?
            .pop()
            .ok_or_else(|| DemoError("generator returned no example".into()))
    }

    /// Replaces the model with a `dfgn train` checkpoint.
    pub fn load_checkpoint(&mut self, text: &str) -> Result<String, DemoError> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(err)?;
        self.pipeline = Pipeline::from_checkpoint(&ckpt).map_err(err)?;
        self.trained = true;
        self.prepared = self.pipeline.prepare(&self.example).map_err(err)?;
        Ok(self.example_json())
    }

    /// Operation 1: a new example and its entity graph.
    pub fn regenerate(&mut self, seed: u64) -> Result<String, DemoError> {
        self.example = Self::generate(seed)?;
        self.prepared = self.pipeline.prepare(&self.example).map_err(err)?;
        Ok(self.example_json())
    }

    pub fn example_json(&self) -> String {
        let g = &self.prepared.graph;
        let n = g.len();
        let nodes = g
            .nodes
            .iter()
            .enumerate()
            .map(|(i, m)| NodeView {
                id: i,
                surface: m.surface_text(),
                paragraph: m.paragraph_index,
                sentence: m.sentence_index,
                span: m.span,
                central: g.central_nodes.contains(&i),
            })
            .collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let k = g.edge(i, j);
                if k.is_empty() {
                    continue;
                }
                let kinds = [
                    (EdgeKinds::SENTENCE, "sentence"),
                    (EdgeKinds::CONTEXT, "context"),
                    (EdgeKinds::PARAGRAPH, "paragraph"),
                ]
                .iter()
                .filter(|(kind, _)| k.contains(*kind))
                .map(|(_, name)| *name)
                .collect();
                edges.push(EdgeView { source: i, target: j, kinds });
            }
        }
        json(&ExampleView {
            example: &self.example,
            kept: &self.prepared.context.kept,
            tokens: &self.prepared.context.tokens,
            nodes,
            edges,
            mean_degree: g.stats().mean_degree,
            missing_support: g.missing_support(&self.example),
            trained: self.trained,
        })
    }

    /// Operation 2: run the reader and report per-hop masks and attention.
    pub fn reason(&self) -> Result<String, DemoError> {
        let pred = self.pipeline.predict(&self.prepared).map_err(err)?;
        let h = &self.prepared.heuristics;
        let hops = pred
            .hop_scores
            .masks
            .iter()
            .zip(&pred.hop_scores.alphas)
            .enumerate()
            .map(|(t, (m, a))| HopView {
                mask: m.clone(),
                alpha: a.data().to_vec(),
                bfs_target: (!h.skip_weak).then(|| h.bfs.get(t).cloned()).flatten(),
            })
            .collect();
        Ok(json(&ReasonView {
            answer: pred.answer,
            gold_answer: self.prepared.gold_answer.clone(),
            support: pred.support.into_iter().collect(),
            hops,
        }))
    }

    /// Operation 3: the best `k` reasoning paths.
    pub fn paths(&self, k: usize) -> Result<String, DemoError> {
        let pred = self.pipeline.predict(&self.prepared).map_err(err)?;
        let g = &self.prepared.graph;
        let paths = if pred.hop_scores.hops() == 0 {
            Vec::new()
        } else {
            top_k_paths(g, &pred.hop_scores, k)
        };
        Ok(json(&PathsView {
            n_walks: dfgn::chains::count_walks(g, pred.hop_scores.hops()),
            paths: paths
                .into_iter()
                .map(|p| PathView {
                    surfaces: p.nodes.iter().map(|&i| g.nodes[i].surface_text()).collect(),
                    nodes: p.nodes,
                    score: p.score,
                })
                .collect(),
            gold_chain: self.example.gold_chain.clone(),
        }))
    }
}

fn js(e: DemoError) -> JsError {
    JsError::new(&e.0)
}

#[wasm_bindgen]
pub struct Demo(Session);

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64) -> Result<Demo, JsError> {
        Session::new(seed).map(Demo).map_err(js)
    }

    #[wasm_bindgen(js_name = loadCheckpoint)]
    pub fn load_checkpoint(&mut self, text: &str) -> Result<String, JsError> {
        self.0.load_checkpoint(text).map_err(js)
    }

    pub fn example(&self) -> String {
        self.0.example_json()
    }

    pub fn regenerate(&mut self, seed: u64) -> Result<String, JsError> {
        self.0.regenerate(seed).map_err(js)
    }

    pub fn reason(&self) -> Result<String, JsError> {
        self.0.reason().map_err(js)
    }

    pub fn paths(&self, k: usize) -> Result<String, JsError> {
        self.0.paths(k).map_err(js)
    }
}
