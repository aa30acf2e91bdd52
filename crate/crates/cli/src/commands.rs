use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use dfgn::chains::{count_walks, esp_report};
use dfgn::config::Config;
use dfgn::data::{generate_synthetic, load_dataset, save_dataset, QaExample, SyntheticSpec};
use dfgn::graph::{recognize, EntityGraph, Gazetteer};
use dfgn::context::Context;
use dfgn::pipeline::{self, EpochLog, Pipeline, TrainOptions};
use dfgn::predictor::MetricsReport;

use crate::{EvalArgs, GenDataArgs, GraphStatsArgs, TraceArgs, TrainArgs};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("DFGN_GIT_DESCRIBE"), ")");

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or values: exit 2.
    Usage(String),
    /// Anything that failed while running: exit 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn runtime<E: fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn usage<E: fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

/// `--seed`, else `DFGN_SEED`, else `None`.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("DFGN_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("DFGN_SEED is not an unsigned integer: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            Config::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn load_data(path: &Path) -> Result<Vec<QaExample>> {
    load_dataset(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn load_gazetteer(explicit: Option<&Path>, data_path: &Path, data: &[QaExample]) -> Result<(Gazetteer, String)> {
    let sibling = data_path.parent().map(|d| d.join("gazetteer.txt"));
    let path = explicit.map(Path::to_path_buf).or_else(|| sibling.filter(|p| p.exists()));
    match path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            Ok((Gazetteer::new(&lines), p.display().to_string()))
        }
        None => {
            let titles: Vec<String> = data
                .iter()
                .flat_map(|ex| ex.paragraphs.iter().map(|p| p.title.join(" ")))
                .collect();
            Ok((Gazetteer::new(&titles), "paragraph titles".into()))
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    argv: &'a [String],
    version: &'static str,
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    config: Option<&'a Config>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synthetic_spec: Option<&'a SyntheticSpec>,
    inputs: BTreeMap<&'static str, String>,
    outputs: BTreeMap<&'static str, String>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    summary: serde_json::Value,
}

impl Manifest<'_> {
    fn save(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(runtime)?;
        write(&dir.join("run.json"), text + "\n")
    }
}

fn show(p: &Path) -> String {
    p.display().to_string()
}

pub fn gen_data(a: GenDataArgs, argv: &[String]) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = resolve_seed(a.seed)? {
        spec.seed = seed;
    }
    if a.n_train == 0 {
        return Err(CliError::Usage("--n-train must be positive".into()));
    }
    spec.n_examples = a.n_train + a.n_dev;
    spec.check().map_err(usage)?;
    let data = generate_synthetic(&spec).map_err(runtime)?;
    let (train, dev) = data.split_at(a.n_train);
    ensure_dir(&a.out)?;
    let train_path = a.out.join("train.json");
    let dev_path = a.out.join("dev.json");
    let gaz_path = a.out.join("gazetteer.txt");
    save_dataset(&train_path, train).map_err(runtime)?;
    save_dataset(&dev_path, dev).map_err(runtime)?;
    write(&gaz_path, spec.entity_surfaces().join("\n") + "\n")?;
    Manifest {
        command: "gen-data",
        argv,
        version: VERSION,
        seed: Some(spec.seed),
        config: None,
        synthetic_spec: Some(&spec),
        inputs: BTreeMap::new(),
        outputs: BTreeMap::from([
            ("train", show(&train_path)),
            ("dev", show(&dev_path)),
            ("gazetteer", show(&gaz_path)),
        ]),
        summary: serde_json::json!({"n_train": train.len(), "n_dev": dev.len()}),
    }
    .save(&a.out)?;
    eprintln!("wrote {} train and {} dev examples to {}", train.len(), dev.len(), a.out.display());
    Ok(())
}

fn check_eta(eta: Option<f64>) -> Result<()> {
    match eta {
        Some(e) if !(0.0..=1.0).contains(&e) => Err(CliError::Usage(format!("--eta must lie in [0, 1], got {e}"))),
        _ => Ok(()),
    }
}

pub fn train(a: TrainArgs, argv: &[String]) -> Result<()> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    if let Some(seed) = resolve_seed(a.common.seed)? {
        cfg.seed = seed;
    }
    check_eta(a.eta)?;
    if let Some(eta) = a.eta {
        cfg.eta = eta;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate().map_err(usage)?;

    let train = load_data(&a.data)?;
    let dev_path = a.dev.clone().or_else(|| {
        let p = a.data.parent()?.join("dev.json");
        (p.exists() && p != a.data).then_some(p)
    });
    let dev = match &dev_path {
        Some(p) => load_data(p)?,
        None => Vec::new(),
    };
    let (gazetteer, gaz_source) = load_gazetteer(a.gazetteer.as_deref(), &a.data, &train)?;
    ensure_dir(&a.out)?;

    let log_path = a.out.join("train_log.csv");
    let mut log_rows = vec![EpochLog::CSV_HEADER.to_string()];
    let outcome = pipeline::train(&train, &dev, &cfg, gazetteer, TrainOptions::default(), &mut |log| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev answer EM {:.3}  support F1 {:.3}  ({:.1}s)",
            log.epoch, log.train_loss, log.dev.answer_em, log.dev.support_f1, log.seconds
        );
        log_rows.push(log.csv_row());
        let _ = fs::write(&log_path, log_rows.join("\n") + "\n");
    })
    .map_err(runtime)?;
    write(&log_path, log_rows.join("\n") + "\n")?;

    let model_path = a.out.join("model.json");
    outcome.pipeline.save(&model_path).map_err(runtime)?;
    let selection_path = a.out.join("selection.csv");
    let mut rows = Vec::new();
    for ex in &dev {
        rows.extend(outcome.pipeline.selection(ex).map_err(runtime)?);
    }
    write_csv(&selection_path, &rows)?;

    let last = outcome.epochs.last().map(|e| e.dev).unwrap_or_default();
    let mut inputs = BTreeMap::from([("data", show(&a.data)), ("gazetteer", gaz_source)]);
    if let Some(p) = &dev_path {
        inputs.insert("dev", show(p));
    }
    if let Some(p) = &a.common.config {
        inputs.insert("config", show(p));
    }
    Manifest {
        command: "train",
        argv,
        version: VERSION,
        seed: Some(cfg.seed),
        config: Some(&cfg),
        synthetic_spec: None,
        inputs,
        outputs: BTreeMap::from([
            ("checkpoint", show(&model_path)),
            ("train_log", show(&log_path)),
            ("selection", show(&selection_path)),
        ]),
        summary: serde_json::json!({
            "dev": last,
            "selector": outcome.selection,
            "step_losses": outcome.step_losses.len(),
            "final_train_loss": outcome.epochs.last().map(|e| e.train_loss),
        }),
    }
    .save(&a.out)?;
    Ok(())
}

fn load_pipeline(ckpt: &Path, eta: Option<f64>) -> Result<Pipeline> {
    check_eta(eta)?;
    let mut p = Pipeline::load(ckpt).map_err(runtime)?;
    if let Some(eta) = eta {
        p.config.eta = eta;
    }
    Ok(p)
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    answer: &'a str,
    gold: &'a str,
    answer_em: f64,
    answer_f1: f64,
    support_f1: f64,
    support: Vec<(usize, usize)>,
}

pub fn eval(a: EvalArgs, argv: &[String]) -> Result<()> {
    let pipeline = load_pipeline(&a.ckpt, a.eta)?;
    let data = load_data(&a.data)?;
    let out = a
        .out
        .clone()
        .or_else(|| a.report.parent().map(Path::to_path_buf))
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&out)?;
    if let Some(parent) = a.report.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    let (report, results) = pipeline.evaluate(&data).map_err(runtime)?;
    write(
        &a.report,
        format!("n,{}\n{},{}\n", MetricsReport::CSV_HEADER, report.n, report.csv_fields()),
    )?;

    let predictions: Vec<PredictionRow> = results
        .iter()
        .map(|r| PredictionRow {
            id: &r.id,
            answer: &r.prediction.answer,
            gold: &r.gold_answer,
            answer_em: r.scores.answer.em,
            answer_f1: r.scores.answer.f1,
            support_f1: r.scores.support.f1,
            support: r.prediction.support.iter().copied().collect(),
        })
        .collect();
    let pred_path = out.join("predictions.json");
    write(&pred_path, serde_json::to_string_pretty(&predictions).map_err(runtime)? + "\n")?;
    let selection_path = out.join("selection.csv");
    let mut rows = Vec::new();
    for ex in &data {
        rows.extend(pipeline.selection(ex).map_err(runtime)?);
    }
    write_csv(&selection_path, &rows)?;
    eprintln!(
        "answer EM {:.3} F1 {:.3} | support EM {:.3} F1 {:.3} | joint EM {:.3} F1 {:.3}",
        report.answer_em, report.answer_f1, report.support_em, report.support_f1, report.joint_em, report.joint_f1
    );
    Manifest {
        command: "eval",
        argv,
        version: VERSION,
        seed: Some(pipeline.config.seed),
        config: Some(&pipeline.config),
        synthetic_spec: None,
        inputs: BTreeMap::from([("data", show(&a.data)), ("checkpoint", show(&a.ckpt))]),
        outputs: BTreeMap::from([
            ("report", show(&a.report)),
            ("predictions", show(&pred_path)),
            ("selection", show(&selection_path)),
        ]),
        summary: serde_json::to_value(report).map_err(runtime)?,
    }
    .save(&out)
}

pub fn parse_ks(text: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--k expects comma-separated positive integers, got {text:?}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage("--k values must be at least 1".into()));
    }
    Ok(ks)
}

#[derive(Serialize)]
struct PathOut {
    nodes: Vec<usize>,
    surfaces: Vec<String>,
    score: f64,
}

#[derive(Serialize)]
struct TraceOut<'a> {
    id: &'a str,
    good_case: bool,
    gold_chain: Option<&'a Vec<String>>,
    supporting_facts: &'a [(usize, usize)],
    n_nodes: usize,
    n_walks: usize,
    top1_matches_gold_chain: Option<bool>,
    paths: Vec<PathOut>,
}

pub fn trace(a: TraceArgs, argv: &[String]) -> Result<()> {
    let ks = parse_ks(&a.k)?;
    let pipeline = load_pipeline(&a.ckpt, a.eta)?;
    let data = load_data(&a.data)?;
    ensure_dir(&a.out)?;
    let k_max = *ks.iter().max().expect("non-empty");
    let cases = pipeline.chain_cases(&data, k_max).map_err(runtime)?;

    let mut traces = Vec::with_capacity(cases.len());
    let (mut good, mut matched) = (0usize, 0usize);
    for ((case, _, _), ex) in cases.iter().zip(&data) {
        let surfaces = |nodes: &[usize]| -> Vec<String> {
            nodes.iter().map(|&i| case.graph.nodes[i].surface_text()).collect()
        };
        let top1 = ex
            .gold_chain
            .as_ref()
            .map(|gold| case.paths.first().is_some_and(|p| &surfaces(&p.nodes) == gold));
        if case.good {
            good += 1;
            if top1 == Some(true) {
                matched += 1;
            }
        }
        traces.push(TraceOut {
            id: &ex.id,
            good_case: case.good,
            gold_chain: ex.gold_chain.as_ref(),
            supporting_facts: &ex.supporting_facts,
            n_nodes: case.graph.len(),
            n_walks: count_walks(&case.graph, pipeline.config.hops),
            top1_matches_gold_chain: top1,
            paths: case
                .paths
                .iter()
                .map(|p| PathOut {
                    surfaces: surfaces(&p.nodes),
                    nodes: p.nodes.clone(),
                    score: p.score,
                })
                .collect(),
        });
    }
    let chain_cases: Vec<_> = cases.iter().map(|(c, _, _)| c.clone()).collect();
    let report = esp_report(&chain_cases, &ks);

    let traces_path = a.out.join("traces.json");
    write(&traces_path, serde_json::to_string_pretty(&traces).map_err(runtime)? + "\n")?;
    let esp_path = a.out.join("esp.csv");
    write(&esp_path, report.to_csv())?;
    let mut outputs = BTreeMap::from([("traces", show(&traces_path)), ("esp", show(&esp_path))]);
    if a.svg {
        let svg_path = a.out.join("esp.svg");
        write(&svg_path, report.to_svg())?;
        outputs.insert("svg", show(&svg_path));
    }
    for (i, k) in ks.iter().enumerate() {
        eprintln!("k={k:<3} ESP EM {:.3}  ESP Recall {:.3}", report.esp_em[i], report.esp_recall[i]);
    }
    let mean_walks = traces.iter().map(|t| t.n_walks as f64).sum::<f64>() / traces.len().max(1) as f64;
    Manifest {
        command: "trace",
        argv,
        version: VERSION,
        seed: Some(pipeline.config.seed),
        config: Some(&pipeline.config),
        synthetic_spec: None,
        inputs: BTreeMap::from([("data", show(&a.data)), ("checkpoint", show(&a.ckpt))]),
        outputs,
        summary: serde_json::json!({
            "esp": report,
            "mean_walks": mean_walks,
            "top1_gold_chain_rate": if good > 0 { matched as f64 / good as f64 } else { 0.0 },
        }),
    }
    .save(&a.out)
}

#[derive(Serialize)]
struct GraphRow<'a> {
    example_id: &'a str,
    n_nodes: usize,
    n_edges_by_type: String,
    mean_degree: f64,
    missing_support_flag: bool,
}

pub fn graph_stats(a: GraphStatsArgs, argv: &[String]) -> Result<()> {
    let data = load_data(&a.data)?;
    let pipeline = match &a.ckpt {
        Some(p) => Some(load_pipeline(p, None)?),
        None => None,
    };
    let max_nodes = a
        .max_nodes
        .or(pipeline.as_ref().map(|p| p.config.max_nodes))
        .unwrap_or(Config::default().max_nodes);
    if max_nodes == 0 {
        return Err(CliError::Usage("--max-nodes must be positive".into()));
    }
    let (gazetteer, gaz_source) = match &pipeline {
        Some(p) if a.gazetteer.is_none() => (p.gazetteer.clone(), "checkpoint".to_string()),
        _ => load_gazetteer(a.gazetteer.as_deref(), &a.data, &data)?,
    };
    ensure_dir(&a.out)?;
    let mut graphs = Vec::with_capacity(data.len());
    for ex in &data {
        let kept: Vec<usize> = match &pipeline {
            Some(p) => dfgn::selector::select_paragraphs(&p.scores(ex).map_err(runtime)?, p.config.eta),
            None => (0..ex.paragraphs.len()).collect(),
        };
        let context = Context::assemble(ex, &kept);
        let mentions = recognize(&context, &gazetteer);
        graphs.push(EntityGraph::build(&mentions, &context, max_nodes));
    }
    let rows: Vec<GraphRow> = data
        .iter()
        .zip(&graphs)
        .map(|(ex, g)| {
            let s = g.stats();
            GraphRow {
                example_id: &ex.id,
                n_nodes: s.n_nodes,
                n_edges_by_type: format!(
                    "sentence={};context={};paragraph={}",
                    s.sentence_edges, s.context_edges, s.paragraph_edges
                ),
                mean_degree: s.mean_degree,
                missing_support_flag: g.missing_support(ex),
            }
        })
        .collect();
    let csv_path = a.out.join("graph_stats.csv");
    write_csv(&csv_path, &rows)?;
    let ratio = dfgn::graph::missing_support_ratio(&data, &graphs);
    let mean_degree = rows.iter().map(|r| r.mean_degree).sum::<f64>() / rows.len().max(1) as f64;
    let mean_nodes = rows.iter().map(|r| r.n_nodes as f64).sum::<f64>() / rows.len().max(1) as f64;
    eprintln!("mean nodes {mean_nodes:.2}, mean degree {mean_degree:.3}, missing-support ratio {ratio:.3}");
    let mut inputs = BTreeMap::from([("data", show(&a.data)), ("gazetteer", gaz_source)]);
    if let Some(p) = &a.ckpt {
        inputs.insert("checkpoint", show(p));
    }
    Manifest {
        command: "graph-stats",
        argv,
        version: VERSION,
        seed: pipeline.as_ref().map(|p| p.config.seed),
        config: pipeline.as_ref().map(|p| &p.config),
        synthetic_spec: None,
        inputs,
        outputs: BTreeMap::from([("graph_stats", show(&csv_path))]),
        summary: serde_json::json!({
            "max_nodes": max_nodes,
            "mean_nodes": mean_nodes,
            "mean_degree": mean_degree,
            "missing_support_ratio": ratio,
        }),
    }
    .save(&a.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_lists() {
        assert_eq!(parse_ks("1,2,5,10").unwrap(), vec![1, 2, 5, 10]);
        assert!(parse_ks("1,0").is_err());
        assert!(parse_ks("a").is_err());
        assert!(parse_ks("").is_err());
    }
}
