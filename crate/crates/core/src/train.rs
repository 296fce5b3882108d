//! Adam training, held-out evaluation, seed replicates and cross-validation.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autograd::{Graph, Var};
use crate::corpus::{length_percentile, Corpus, Example, FoldPlan, Vocab};
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1};
use crate::model::{argmax, parse_value, AgaModel, Instance, ModelConfig, ParamSet};
use crate::report::{EpochMetrics, RunRecord, RunReport};
use crate::tcol::{TcolIndex, TcolTable};

/// Word → vector map from an embedding file.
pub type WordVectors = HashMap<String, Vec<f32>>;

// Independent random streams derived from one run seed.
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Cross-validation folds; 0 trains on the given train/test split.
    pub folds: usize,
    /// Seed replicates; run `i` uses `model.seed + i`.
    pub seeds: usize,
    /// Sentence-length percentile used when `model.seq_len` is automatic.
    pub length_percentile: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            folds: 0,
            seeds: 5,
            length_percentile: 95.0,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "lr",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "folds",
    "seeds",
    "length_percentile",
];

impl TrainConfig {
    /// Sets a training or model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "folds" => self.folds = parse_value(key, value)?,
            "seeds" => self.seeds = parse_value(key, value)?,
            "length_percentile" => self.length_percentile = parse_value(key, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate_hyper()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::config(
                "lr",
                format!("{} is not a valid learning rate", self.lr),
            ));
        }
        for (key, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("{b} not in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.folds == 1 {
            return Err(Error::config(
                "folds",
                "cross-validation needs at least 2 folds",
            ));
        }
        if self.seeds == 0 {
            return Err(Error::config("seeds", "must be at least 1"));
        }
        if !(0.0 < self.length_percentile && self.length_percentile <= 100.0) {
            return Err(Error::config("length_percentile", "must lie in (0, 100]"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut pairs = self.model.to_pairs();
        let values = [
            self.epochs.to_string(),
            self.batch_size.to_string(),
            format!("{:?}", self.lr),
            format!("{:?}", self.adam_beta1),
            format!("{:?}", self.adam_beta2),
            format!("{:?}", self.adam_eps),
            self.folds.to_string(),
            self.seeds.to_string(),
            format!("{:?}", self.length_percentile),
        ];
        pairs.extend(
            TRAIN_KEYS
                .iter()
                .zip(values)
                .map(|(k, v)| (k.to_string(), v)),
        );
        pairs
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| vec![0.0; t.numel()])
                .collect()
        };
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(params: &ParamSet<f32>, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    }

    /// Updates every parameter with `trainable(i)` set; each of those needs
    /// a gradient.
    pub fn update(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &[Option<Vec<f32>>],
        trainable: impl Fn(usize) -> bool,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            if !trainable(i) {
                continue;
            }
            let Some(g) = &grads[i] else {
                return Err(Error::Contract(format!(
                    "no gradient for parameter `{}`",
                    params.names[i]
                )));
            };
            if g.len() != tensor.numel() {
                return Err(Error::Dimension(format!(
                    "gradient of `{}` has wrong length",
                    params.names[i]
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] as f64 / c1;
                let v_hat = v[j] as f64 / c2;
                *p -= (self.lr * m_hat / (v_hat.sqrt() + self.eps)) as f32;
            }
        }
        Ok(())
    }
}

/// Mean cross-entropy of a batch and the parameter gradients.
pub struct BatchResult {
    pub loss: f64,
    pub losses: Vec<f64>,
    pub predictions: Vec<usize>,
    pub grads: Vec<Option<Vec<f32>>>,
}

/// Forward and backward over one minibatch on a fresh graph.
pub fn batch_step(
    model: &AgaModel<f32>,
    batch: &[&Instance<f32>],
    rng: &mut ChaCha8Rng,
) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut losses = Vec::with_capacity(batch.len());
    let mut predictions = Vec::with_capacity(batch.len());
    for inst in batch {
        let trace = model.forward(&mut g, &vars, &inst.tokens, &inst.tcol, Mode::Train, rng)?;
        predictions.push(argmax(g.value(trace.logits).data()));
        losses.push(g.cross_entropy(trace.logits, inst.label)?);
    }
    let loss = g.mean(&losses)?;
    g.backward(loss)?;
    let loss_value = g.value(loss).item() as f64;
    let per_example = losses.iter().map(|&l| g.value(l).item() as f64).collect();
    let grads = vars.iter().map(|&v: &Var| g.take_grad(v)).collect();
    Ok(BatchResult {
        loss: loss_value,
        losses: per_example,
        predictions,
        grads,
    })
}

/// Loss, accuracy and macro-F1 of `model` in evaluation mode.
pub fn evaluate(
    model: &AgaModel<f32>,
    data: &[Instance<f32>],
) -> Result<(f64, f64, f64, Vec<usize>)> {
    let scored: Vec<(f64, usize)> = data
        .par_iter()
        .map(|inst| {
            let logits = model.predict_logits(inst)?;
            Ok((cross_entropy_value(&logits, inst.label), argmax(&logits)))
        })
        .collect::<Result<_>>()?;
    let loss = scored.iter().map(|s| s.0).sum::<f64>() / scored.len() as f64;
    let preds: Vec<usize> = scored.iter().map(|s| s.1).collect();
    let labels: Vec<usize> = data.iter().map(|i| i.label).collect();
    let c = model.config().num_classes;
    Ok((
        loss,
        accuracy(&preds, &labels)?,
        macro_f1(&preds, &labels, c)?,
        preds,
    ))
}

fn cross_entropy_value(logits: &[f32], label: usize) -> f64 {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b as f64));
    let lse = max
        + logits
            .iter()
            .map(|&l| (l as f64 - max).exp())
            .sum::<f64>()
            .ln();
    lse - logits[label] as f64
}

/// Everything fitted on one training split.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub vocab: Vocab,
    pub tcol: TcolTable,
    pub index: TcolIndex,
    pub seq_len: usize,
    pub labels: Vec<String>,
}

impl Prepared {
    /// Vocabulary, TCoL table and sentence length from `train` alone.
    pub fn fit(train: &Corpus, cfg: &TrainConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        let vocab = Vocab::build(&train.docs)?;
        let tcol = TcolTable::build(&train.docs, train.num_classes(), vocab.len())?;
        let index = tcol.by_index(&vocab);
        let seq_len = cfg
            .model
            .seq_len
            .unwrap_or_else(|| length_percentile(&train.docs, cfg.length_percentile));
        Ok(Prepared {
            vocab,
            tcol,
            index,
            seq_len,
            labels: train.labels.clone(),
        })
    }

    pub fn instances(&self, corpus: &Corpus) -> Result<Vec<Instance<f32>>> {
        if corpus.labels != self.labels {
            return Err(Error::Contract(format!(
                "label sets differ: {:?} vs {:?}",
                corpus.labels, self.labels
            )));
        }
        corpus
            .docs
            .iter()
            .map(|d| {
                let ex = Example::encode(d, &self.vocab, self.seq_len);
                let tcol = self.index.sentence_normalized(&ex.tokens)?;
                Ok(Instance {
                    tokens: ex.tokens,
                    tcol,
                    label: ex.label,
                })
            })
            .collect()
    }

    /// Model config with the data-derived fields filled in.
    pub fn resolve(&self, model: &ModelConfig) -> ModelConfig {
        ModelConfig {
            vocab_size: self.vocab.len(),
            num_classes: self.labels.len(),
            seq_len: Some(self.seq_len),
            ..model.clone()
        }
    }
}

/// Outcome of a single training run.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub record: RunRecord,
    /// Parameters from the best epoch.
    pub model: AgaModel<f32>,
    pub prepared: Prepared,
}

/// Trains on `train`, evaluating on `test` after every epoch.
pub fn train_run(
    cfg: &TrainConfig,
    train: &Corpus,
    test: &Corpus,
    vectors: Option<&WordVectors>,
) -> Result<TrainedRun> {
    cfg.validate()?;
    if test.is_empty() {
        return Err(Error::Contract("test split is empty".into()));
    }
    let started = Instant::now();
    let prepared = Prepared::fit(train, cfg)?;
    let train_set = prepared.instances(train)?;
    let test_set = prepared.instances(test)?;

    let mut model = AgaModel::<f32>::new(prepared.resolve(&cfg.model))?;
    if let Some(vectors) = vectors {
        let rows = prepared
            .vocab
            .tokens()
            .iter()
            .enumerate()
            .filter_map(|(i, w)| vectors.get(w).map(|v| (i, v.clone())));
        model.set_embedding_rows(rows)?;
    }
    let seed = cfg.model.seed;
    let mut shuffle_rng = stream(seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream(seed, DROPOUT_STREAM);
    let mut adam = AdamState::from_config(&model.params, cfg);
    let c = prepared.labels.len();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamSet<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut preds = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Instance<f32>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step = batch_step(&model, &batch, &mut dropout_rng)?;
            loss_sum += step.losses.iter().sum::<f64>();
            preds.extend(step.predictions);
            labels.extend(batch.iter().map(|i| i.label));
            let frozen: Vec<bool> = (0..model.params.len())
                .map(|i| !model.trainable(i))
                .collect();
            adam.update(&mut model.params, &step.grads, |i| !frozen[i])?;
        }
        let (test_loss, test_accuracy, test_f1, _) = evaluate(&model, &test_set)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            train_accuracy: accuracy(&preds, &labels)?,
            train_f1: macro_f1(&preds, &labels, c)?,
            test_loss,
            test_accuracy,
            test_f1,
        };
        if !metrics.train_loss.is_finite() || !metrics.test_loss.is_finite() {
            return Err(Error::Contract(format!("loss diverged at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|b| test_accuracy > b.1) {
            best = Some((epoch, test_accuracy, model.params.clone()));
        }
        epochs.push(metrics);
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    let model = AgaModel::from_params(model.config().clone(), best_params)?;
    Ok(TrainedRun {
        record: RunRecord {
            label: format!("seed{seed}"),
            seed,
            fold: None,
            train_size: train_set.len(),
            test_size: test_set.len(),
            epochs,
            best_epoch,
            wall_clock: started.elapsed(),
        },
        model,
        prepared,
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One job of a multi-run experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Job {
    seed: u64,
    fold: Option<usize>,
}

/// Runs every seed replicate (and every fold when `cfg.folds ≥ 2`) in
/// parallel. With folds, `corpus` is split per fold and `test` must be
/// `None`; vocabulary, TCoL and sentence length are refitted on each fold's
/// training portion.
pub fn run_experiment(
    cfg: &TrainConfig,
    corpus: &Corpus,
    test: Option<&Corpus>,
    vectors: Option<&WordVectors>,
) -> Result<(RunReport, Vec<TrainedRun>)> {
    cfg.validate()?;
    let plan = if cfg.folds >= 2 {
        if test.is_some() {
            return Err(Error::config(
                "folds",
                "cross-validation takes one corpus, not a train/test pair",
            ));
        }
        Some(FoldPlan::new(corpus.len(), cfg.folds, cfg.model.seed)?)
    } else {
        if test.is_none() {
            return Err(Error::config(
                "folds",
                "without cross-validation a test split is required",
            ));
        }
        None
    };
    let mut jobs = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.model.seed + s;
        match &plan {
            Some(p) => jobs.extend((0..p.k).map(|f| Job {
                seed,
                fold: Some(f),
            })),
            None => jobs.push(Job { seed, fold: None }),
        }
    }
    let runs: Vec<TrainedRun> = jobs
        .par_iter()
        .map(|job| {
            let mut job_cfg = cfg.clone();
            job_cfg.model.seed = job.seed;
            let mut run = match (job.fold, &plan) {
                (Some(f), Some(p)) => {
                    let train = corpus.subset(&p.train_indices(f));
                    let held = corpus.subset(&p.test_indices(f));
                    train_run(&job_cfg, &train, &held, vectors)?
                }
                _ => train_run(&job_cfg, corpus, test.expect("checked above"), vectors)?,
            };
            run.record.fold = job.fold;
            if let Some(f) = job.fold {
                run.record.label = format!("seed{}-fold{f}", job.seed);
            }
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let report = RunReport {
        config: cfg.to_pairs(),
        runs: runs.iter().map(|r| r.record.clone()).collect(),
    };
    Ok((report, runs))
}
