//! Selector + reader as one trainable, checkpointable unit.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chains::{top_k_paths, ChainCase, ReasoningPath};
use crate::config::{Config, ConfigError};
use crate::data::{DataError, QaExample, Vocabulary};
use crate::graph::Gazetteer;
use crate::model::{Prediction, Prepared, Reader};
use crate::predictor::{ExampleScores, MetricsReport};
use crate::selector::{select_paragraphs, selection_rows, train_selector, SelectionQuality, SelectionRow, SelectorModel};
use crate::tensor::{Adam, AdamConfig, Checkpoint, ParamStore, Tape, TensorError};
use crate::Dropout;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

const SELECTOR_PREFIX: &str = "selector.";

/// Non-parameter state stored alongside the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: Config,
    vocab: Vec<String>,
    gazetteer: Vec<String>,
}

pub struct Pipeline {
    pub config: Config,
    pub vocab: Vocabulary,
    pub gazetteer: Gazetteer,
    pub selector: SelectorModel,
    pub selector_store: ParamStore,
    pub reader: Reader,
    pub reader_store: ParamStore,
}

/// One row of the training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: MetricsReport,
    pub seconds: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,answer_em,answer_f1,support_em,support_f1,joint_em,joint_f1,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{},{:.2}",
            self.epoch,
            self.train_loss,
            self.dev.csv_fields(),
            self.seconds
        )
    }
}

pub struct TrainOutcome {
    pub pipeline: Pipeline,
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub selector_losses: Vec<f64>,
    pub selection: SelectionQuality,
}

/// Knobs of a training run that are not model hyperparameters.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Stop once dev answer EM and support F1 both reach these values.
    pub stop_at: Option<(f64, f64)>,
    /// Skip the per-epoch dev evaluation.
    pub skip_dev_eval: bool,
}

/// Per-example evaluation output.
#[derive(Clone, Debug, Serialize)]
pub struct ExampleResult {
    pub id: String,
    pub prediction: Prediction,
    pub gold_answer: String,
    pub scores: ExampleScores,
}

impl Pipeline {
    /// Fresh weights drawn from `config.seed`.
    pub fn new(config: Config, vocab: Vocabulary, gazetteer: Gazetteer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut selector_store = ParamStore::new();
        let selector = SelectorModel::new(&mut selector_store, vocab.len(), config.selector_dim, &mut rng);
        let mut reader_store = ParamStore::new();
        let reader = Reader::new(&mut reader_store, vocab.len(), &config, &mut rng);
        Ok(Pipeline {
            config,
            vocab,
            gazetteer,
            selector,
            selector_store,
            reader,
            reader_store,
        })
    }

    pub fn scores(&self, example: &QaExample) -> Result<Vec<f64>> {
        Ok(self.selector.score_example(&self.selector_store, &self.vocab, example)?)
    }

    pub fn selection(&self, example: &QaExample) -> Result<Vec<SelectionRow>> {
        Ok(selection_rows(example, &self.scores(example)?, self.config.eta))
    }

    pub fn prepare(&self, example: &QaExample) -> Result<Prepared> {
        let kept = select_paragraphs(&self.scores(example)?, self.config.eta);
        Ok(Prepared::new(example, &kept, &self.vocab, &self.gazetteer, &self.config)?)
    }

    pub fn prepare_all(&self, data: &[QaExample]) -> Result<Vec<Prepared>> {
        data.iter().map(|ex| self.prepare(ex)).collect()
    }

    pub fn predict(&self, prep: &Prepared) -> Result<Prediction> {
        Ok(self.reader.predict(&self.reader_store, prep)?)
    }

    pub fn evaluate_prepared(&self, prepared: &[Prepared]) -> Result<(MetricsReport, Vec<ExampleResult>)> {
        let mut results = Vec::with_capacity(prepared.len());
        for prep in prepared {
            let prediction = self.predict(prep)?;
            let scores =
                ExampleScores::compute(&prediction.answer, &prep.gold_answer, &prediction.support, &prep.gold_support);
            results.push(ExampleResult {
                id: prep.id.clone(),
                gold_answer: prep.gold_answer.clone(),
                prediction,
                scores,
            });
        }
        let all: Vec<ExampleScores> = results.iter().map(|r| r.scores).collect();
        Ok((MetricsReport::aggregate(&all), results))
    }

    pub fn evaluate(&self, data: &[QaExample]) -> Result<(MetricsReport, Vec<ExampleResult>)> {
        self.evaluate_prepared(&self.prepare_all(data)?)
    }

    /// Top paths per example for ESP evaluation, `k_max` per case.
    pub fn chain_cases(&self, data: &[QaExample], k_max: usize) -> Result<Vec<(ChainCase, Prepared, Prediction)>> {
        let mut out = Vec::with_capacity(data.len());
        for ex in data {
            let prep = self.prepare(ex)?;
            let prediction = self.predict(&prep)?;
            let paths: Vec<ReasoningPath> = if prediction.hop_scores.hops() == 0 {
                Vec::new()
            } else {
                top_k_paths(&prep.graph, &prediction.hop_scores, k_max)
            };
            let case = ChainCase {
                good: !prep.graph.missing_support(ex),
                graph: prep.graph.clone(),
                supporting_facts: ex.supporting_facts.clone(),
                paths,
            };
            out.push((case, prep, prediction));
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab: self.vocab.words().to_vec(),
            gazetteer: self.gazetteer.surfaces(),
        };
        let mut ckpt = self
            .reader_store
            .to_checkpoint(serde_json::to_value(meta).expect("meta serializes"));
        let sel = self.selector_store.to_checkpoint(serde_json::Value::Null);
        ckpt.params.extend(sel.params);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_value(ckpt.meta.clone()).map_err(|e| PipelineError::Checkpoint(e.to_string()))?;
        let vocab = Vocabulary::from_tokens(&meta.vocab);
        if vocab.words() != meta.vocab.as_slice() {
            return Err(PipelineError::Checkpoint("vocabulary is not in canonical order".into()));
        }
        let mut p = Pipeline::new(meta.config, vocab, Gazetteer::new(&meta.gazetteer))?;
        let split = |selector: bool| Checkpoint {
            version: ckpt.version.clone(),
            params: ckpt
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(SELECTOR_PREFIX) == selector)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            meta: serde_json::Value::Null,
        };
        p.selector_store.load_checkpoint(&split(true))?;
        p.reader_store.load_checkpoint(&split(false))?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()
            .save(path)
            .map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(path).map_err(|e| PipelineError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Trains the selector, then the reader on selector-chosen contexts. Dev
/// metrics are computed after every epoch and passed to `on_epoch`.
pub fn train(
    train: &[QaExample],
    dev: &[QaExample],
    config: &Config,
    gazetteer: Gazetteer,
    options: TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(PipelineError::Invalid("training set is empty".into()));
    }
    let vocab = Vocabulary::build(train);
    let mut p = Pipeline::new(config.clone(), vocab, gazetteer)?;
    // separate streams so that changing one consumer never shifts another
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0001);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0002);
    let mut selector_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0003);

    let selector_losses = train_selector(
        &p.selector,
        &mut p.selector_store,
        &p.vocab,
        train,
        config.selector_epochs,
        config.selector_lr,
        &mut selector_rng,
    )?;
    let mut rows = Vec::new();
    for ex in dev {
        rows.extend(p.selection(ex)?);
    }
    let selection = SelectionQuality::from_rows(&rows);

    let train_prep = p.prepare_all(train)?;
    let dev_prep = p.prepare_all(dev)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &p.reader_store,
    );
    let mut order: Vec<usize> = (0..train_prep.len()).collect();
    let mut epochs = Vec::new();
    let mut step_losses = Vec::new();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let mut dropout = Dropout::train(&mut dropout_rng);
                let out = p.reader.forward(&mut tape, &p.reader_store, &train_prep[i], &mut dropout)?;
                let terms = p.reader.loss(&mut tape, &out, &train_prep[i])?;
                batch_loss += tape.value(terms.total).item();
                tape.backward(terms.total)?;
                tape.accumulate_param_grads(&mut p.reader_store);
            }
            if batch.len() > 1 {
                p.reader_store.scale_grads(1.0 / batch.len() as f64);
            }
            adam.step(&mut p.reader_store);
            let mean = batch_loss / batch.len() as f64;
            if !mean.is_finite() {
                return Err(PipelineError::Invalid(format!("loss diverged at epoch {epoch}")));
            }
            step_losses.push(mean);
            total += batch_loss;
        }
        let dev_report = if options.skip_dev_eval || dev_prep.is_empty() {
            MetricsReport::default()
        } else {
            p.evaluate_prepared(&dev_prep)?.0
        };
        let log = EpochLog {
            epoch,
            train_loss: total / train_prep.len() as f64,
            dev: dev_report,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&log);
        epochs.push(log);
        if let Some((em, f1)) = options.stop_at {
            if dev_report.answer_em >= em && dev_report.support_f1 >= f1 {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        pipeline: p,
        epochs,
        step_losses,
        selector_losses,
        selection,
    })
}
