//! Adversarial training loop.
//!
//! Every step draws half a batch of labeled source documents and half of
//! target documents. The sentiment loss covers the labeled half only; the
//! domain loss covers the whole batch and reaches the encoders through
//! gradient reversal whose strength `lambda` grows with the epoch.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    Adam, AdamConfig, AutodiffError, Checkpoint, Graph, Mode, ParamStore, Tensor, Var,
};
use crate::corpus::{Document, Domain, DomainPairDataset, Sentiment, SPECIFIC_ID};
use crate::network::{DocumentInput, NetworkError, TdanModel};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("document `{0}` is in the sentiment half of a batch but has no label")]
    UnlabeledSource(String),
    #[error("cannot sample from an empty {0} pool")]
    EmptyPool(&'static str),
    #[error("cannot evaluate on an empty document set")]
    EmptyEvaluation,
    #[error("no extracted specific words for document `{0}`; run extraction first")]
    MissingSpecificWords(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: L_cls={cls}, L_dom={dom}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        cls: f64,
        dom: f64,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainingError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the domain loss.
    pub rho: f64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Documents per step, half source and half target.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a dev improvement before stopping.
    pub patience: usize,
    pub lambda_cap: f64,
    /// Overrides `ceil(max(n_source, n_target) / (batch_size / 2))`.
    pub steps_per_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rho: 1.0,
            lr: 2e-4,
            weight_decay: 5e-5,
            batch_size: 40,
            max_epochs: 50,
            patience: 10,
            lambda_cap: 0.1,
            steps_per_epoch: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainingError::InvalidConfig(m));
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "batch size {} must be even and positive",
                self.batch_size
            ));
        }
        if self.patience > self.max_epochs {
            return bad(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            ));
        }
        if !(self.rho >= 0.0)
            || !(self.lr >= 0.0)
            || !(self.weight_decay >= 0.0)
            || !(self.lambda_cap >= 0.0)
        {
            return bad("rho, lr, weight_decay and lambda_cap must be >= 0".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive".into());
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// `min(2 / (1 + exp(-10 t / T)) - 1, cap)`.
///
/// ```
/// use tdan_core::training::lambda_schedule;
/// assert_eq!(lambda_schedule(0, 50, 0.1), 0.0);
/// assert_eq!(lambda_schedule(50, 50, 0.1), 0.1);
/// ```
pub fn lambda_schedule(t: usize, max_epochs: usize, cap: f64) -> f64 {
    let p = t as f64 / max_epochs.max(1) as f64;
    (2.0 / (1.0 + (-10.0 * p).exp()) - 1.0).min(cap)
}

/// A document ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: String,
    pub tokens: Vec<usize>,
    /// Extracted specific words, `<specific_token>` first.
    pub specific: Vec<usize>,
    pub label: Option<Sentiment>,
    pub domain: Domain,
}

impl Example {
    pub fn input(&self) -> DocumentInput<'_> {
        DocumentInput {
            tokens: &self.tokens,
            specific: &self.specific,
        }
    }

    /// Pairs a document with its extracted words. Without them the sequence
    /// is `[<specific_token>]` unless `require_specific` is set.
    pub fn from_document(
        doc: &Document,
        specific: &BTreeMap<String, Vec<usize>>,
        require_specific: bool,
    ) -> Result<Self> {
        let specific = match specific.get(&doc.id) {
            Some(words) => words.clone(),
            None if require_specific => {
                return Err(TrainingError::MissingSpecificWords(doc.id.clone()))
            }
            None => vec![SPECIFIC_ID],
        };
        Ok(Self {
            doc_id: doc.id.clone(),
            tokens: doc.tokens.clone(),
            specific,
            label: doc.label,
            domain: doc.domain,
        })
    }
}

/// Everything the loop reads.
#[derive(Debug, Clone, Default)]
pub struct TrainingData {
    /// Labeled source documents.
    pub source: Vec<Example>,
    /// Unlabeled target documents.
    pub target: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl TrainingData {
    /// Unlabeled source documents play no part in the losses and are left out.
    pub fn from_dataset(
        dataset: &DomainPairDataset,
        specific: &BTreeMap<String, Vec<usize>>,
        require_specific: bool,
    ) -> Result<Self> {
        let conv = |docs: &[Document]| -> Result<Vec<Example>> {
            docs.iter()
                .map(|d| Example::from_document(d, specific, require_specific))
                .collect()
        };
        Ok(Self {
            source: conv(&dataset.source_labeled)?,
            target: conv(&dataset.target_unlabeled)?,
            dev: conv(&dataset.dev)?,
            test: conv(&dataset.test)?,
        })
    }
}

/// Indices into the source and target pools for one step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Cycles through both pools in seeded random order; a pool that runs out
/// is reshuffled and continues, so the smaller pool wraps around.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    half: usize,
    pools: [Vec<usize>; 2],
    cursors: [usize; 2],
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n_source: usize, n_target: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n_source == 0 {
            return Err(TrainingError::EmptyPool("source"));
        }
        if n_target == 0 {
            return Err(TrainingError::EmptyPool("target"));
        }
        if batch_size == 0 || !batch_size.is_multiple_of(2) {
            return Err(TrainingError::InvalidConfig(format!(
                "batch size {batch_size} must be even and positive"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pools = [(0..n_source).collect::<Vec<_>>(), (0..n_target).collect()];
        for p in &mut pools {
            p.shuffle(&mut rng);
        }
        Ok(Self {
            half: batch_size / 2,
            pools,
            cursors: [0, 0],
            rng,
        })
    }

    /// `ceil(max(n_source, n_target) / half)`: one pass over the larger pool.
    pub fn steps_per_epoch(&self) -> usize {
        self.pools[0]
            .len()
            .max(self.pools[1].len())
            .div_ceil(self.half)
    }

    fn draw(&mut self, which: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.half);
        while out.len() < self.half {
            if self.cursors[which] == self.pools[which].len() {
                self.pools[which].shuffle(&mut self.rng);
                self.cursors[which] = 0;
            }
            out.push(self.pools[which][self.cursors[which]]);
            self.cursors[which] += 1;
        }
        out
    }

    pub fn next_batch(&mut self) -> Batch {
        Batch {
            source: self.draw(0),
            target: self.draw(1),
        }
    }
}

/// Loss nodes of one batch.
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub cls: Var,
    pub dom: Var,
    pub total: Var,
}

/// `L_cls` = mean cross-entropy of `sentiment_logits` against `labels`,
/// `L_dom` = mean cross-entropy of `domain_logits` against `domains`,
/// `L_total = L_cls + rho * L_dom`.
pub fn losses_from_logits(
    g: &mut Graph,
    sentiment_logits: Var,
    labels: &[Sentiment],
    domain_logits: Var,
    domains: &[Domain],
    rho: f64,
) -> Result<Losses> {
    let y: Vec<usize> = labels.iter().map(|l| l.class_index()).collect();
    let d: Vec<usize> = domains.iter().map(|d| d.class_index()).collect();
    let cls = g.cross_entropy(sentiment_logits, &y)?;
    let dom = g.cross_entropy(domain_logits, &d)?;
    let weighted = g.scale(dom, rho);
    let total = g.add(cls, weighted)?;
    Ok(Losses { cls, dom, total })
}

/// Forward pass of a batch: sentiment loss over `source`, domain loss over
/// `source` followed by `target`.
pub fn compute_losses(
    model: &TdanModel,
    g: &mut Graph,
    source: &[&Example],
    target: &[&Example],
    rho: f64,
    lambda: f64,
) -> Result<Losses> {
    let labels = source
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| TrainingError::UnlabeledSource(e.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sentiment = Vec::with_capacity(source.len());
    let mut domain = Vec::with_capacity(source.len() + target.len());
    let mut domains = Vec::with_capacity(source.len() + target.len());
    for (i, e) in source.iter().chain(target).enumerate() {
        let f = model.forward(g, e.input(), lambda)?;
        if i < source.len() {
            sentiment.push(f.sentiment_logits);
        }
        domain.push(f.domain_logits);
        domains.push(e.domain);
    }
    let s = g.concat(&sentiment, 0)?;
    let d = g.concat(&domain, 0)?;
    losses_from_logits(g, s, &labels, d, &domains, rho)
}

/// Fraction of predictions equal to their label.
pub fn accuracy(predictions: &[Sentiment], labels: &[Sentiment]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(TrainingError::EmptyEvaluation);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Argmax sentiment of every document.
pub fn predict(model: &TdanModel, docs: &[Example]) -> Result<Vec<Sentiment>> {
    let inputs: Vec<DocumentInput<'_>> = docs.iter().map(Example::input).collect();
    Ok(model
        .infer_batch(&inputs)?
        .iter()
        .map(|inf| {
            if inf.sentiment[1] > inf.sentiment[0] {
                Sentiment::Positive
            } else {
                Sentiment::Negative
            }
        })
        .collect())
}

pub fn evaluate_accuracy(model: &TdanModel, docs: &[Example]) -> Result<f64> {
    if docs.is_empty() {
        return Err(TrainingError::EmptyEvaluation);
    }
    let labels = docs
        .iter()
        .map(|e| {
            e.label
                .ok_or_else(|| TrainingError::UnlabeledSource(e.doc_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    accuracy(&predict(model, docs)?, &labels)
}

/// Accuracy of the model's own domain head.
pub fn domain_head_accuracy(model: &TdanModel, docs: &[Example]) -> Result<f64> {
    if docs.is_empty() {
        return Err(TrainingError::EmptyEvaluation);
    }
    let inputs: Vec<DocumentInput<'_>> = docs.iter().map(Example::input).collect();
    let inf = model.infer_batch(&inputs)?;
    let hits = inf
        .iter()
        .zip(docs)
        .filter(|(i, e)| (i.domain[1] > i.domain[0]) == (e.domain == Domain::Target))
        .count();
    Ok(hits as f64 / docs.len() as f64)
}

/// How well a fresh linear classifier can tell the domains apart from the
/// frozen fused features `h_f`.
///
/// Each domain's documents are shuffled and split in half; a logistic
/// regression is fit on one half of both domains and scored on the other.
pub fn domain_probe_accuracy(
    model: &TdanModel,
    source: &[Example],
    target: &[Example],
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = |docs: &[Example]| {
        let mut idx: Vec<usize> = (0..docs.len()).collect();
        idx.shuffle(&mut rng);
        let (a, b) = idx.split_at(docs.len() / 2);
        (a.to_vec(), b.to_vec())
    };
    let (s_fit, s_eval) = split(source);
    let (t_fit, t_eval) = split(target);
    if s_fit.is_empty() || t_fit.is_empty() || s_eval.is_empty() || t_eval.is_empty() {
        return Err(TrainingError::EmptyEvaluation);
    }
    let features = |docs: &[Example], idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        let inputs: Vec<DocumentInput<'_>> = idx.iter().map(|&i| docs[i].input()).collect();
        Ok(model
            .infer_batch(&inputs)?
            .into_iter()
            .map(|i| i.h_f)
            .collect())
    };
    let fit: Vec<(Vec<f64>, usize)> = features(source, &s_fit)?
        .into_iter()
        .map(|f| (f, 0))
        .chain(features(target, &t_fit)?.into_iter().map(|f| (f, 1)))
        .collect();
    let eval: Vec<(Vec<f64>, usize)> = features(source, &s_eval)?
        .into_iter()
        .map(|f| (f, 0))
        .chain(features(target, &t_eval)?.into_iter().map(|f| (f, 1)))
        .collect();
    let probe = LinearProbe::fit(&fit, 300, seed)?;
    let hits = eval.iter().filter(|(x, y)| probe.predict(x) == *y).count();
    Ok(hits as f64 / eval.len() as f64)
}

/// Two-class logistic regression over standardized features.
struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Tensor,
    bias: Tensor,
}

impl LinearProbe {
    fn fit(data: &[(Vec<f64>, usize)], epochs: usize, seed: u64) -> Result<Self> {
        let d = data[0].0.len();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for (x, _) in data {
            mean.iter_mut().zip(x).for_each(|(m, v)| *m += v / n);
        }
        let mut scale = vec![0.0; d];
        for (x, _) in data {
            scale
                .iter_mut()
                .zip(x.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n);
        }
        scale.iter_mut().for_each(|s| *s = 1.0 / (s.sqrt() + 1e-8));
        let rows: Vec<f64> = data
            .iter()
            .flat_map(|(x, _)| standardize(x, &mean, &scale))
            .collect();
        let x = Tensor::matrix(data.len(), d, rows)?;
        let y: Vec<usize> = data.iter().map(|(_, y)| *y).collect();

        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = store.xavier("probe.w", 2, d, &mut rng)?;
        let b = store.insert("probe.b", Tensor::zeros(1, 2))?;
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.05,
                weight_decay: 1e-3,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..epochs {
            let grads = {
                let mut g = Graph::new(&store, Mode::Eval);
                let xv = g.constant(x.clone());
                let (wv, bv) = (g.param(w), g.param(b));
                let z = g.matmul_nt(xv, wv)?;
                let logits = g.add_row(z, bv)?;
                let loss = g.cross_entropy(logits, &y)?;
                g.backward(loss)?.into_params()
            };
            store.accumulate(&grads);
            adam.step(&mut store)?;
        }
        Ok(Self {
            mean,
            scale,
            weights: store.value(w).clone(),
            bias: store.value(b).clone(),
        })
    }

    fn predict(&self, x: &[f64]) -> usize {
        let z = standardize(x, &self.mean, &self.scale);
        let score = |c: usize| -> f64 {
            self.weights
                .row_slice(c)
                .iter()
                .zip(&z)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + self.bias.data()[c]
        };
        usize::from(score(1) > score(0))
    }
}

fn standardize(x: &[f64], mean: &[f64], scale: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(mean)
        .zip(scale)
        .map(|((v, m), s)| (v - m) * s)
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lambda: f64,
    #[serde(rename = "L_cls")]
    pub l_cls: f64,
    #[serde(rename = "L_dom")]
    pub l_dom: f64,
    #[serde(rename = "L_total")]
    pub l_total: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingState {
    /// Training epochs completed.
    pub epoch: usize,
    pub best_dev_accuracy: f64,
    /// 0 when no epoch beat the untrained model.
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    /// Dev accuracy before the first update.
    pub initial_dev_accuracy: f64,
    pub history: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Trains `model` in place and leaves it at the parameters with the best
/// dev accuracy. `on_epoch` sees each log line as it is produced.
pub fn train(
    model: &mut TdanModel,
    data: &TrainingData,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainingState> {
    config.validate()?;
    if data.dev.is_empty() {
        return Err(TrainingError::EmptyEvaluation);
    }
    let mut sampler = BatchSampler::new(
        data.source.len(),
        data.target.len(),
        config.batch_size,
        config.seed,
    )?;
    let steps = config
        .steps_per_epoch
        .unwrap_or_else(|| sampler.steps_per_epoch());
    let mut adam = Adam::new(config.adam(), model.store());

    let initial = evaluate_accuracy(model, &data.dev)?;
    let mut state = TrainingState {
        epoch: 0,
        best_dev_accuracy: initial,
        best_epoch: 0,
        epochs_since_improvement: 0,
        initial_dev_accuracy: initial,
        history: Vec::new(),
        stopped_early: false,
    };
    let mut best: Checkpoint = model.snapshot();

    for epoch in 1..=config.max_epochs {
        let lambda = lambda_schedule(epoch - 1, config.max_epochs, config.lambda_cap);
        let (mut sum_cls, mut sum_dom) = (0.0, 0.0);
        for step in 0..steps {
            let batch = sampler.next_batch();
            let source: Vec<&Example> = batch.source.iter().map(|&i| &data.source[i]).collect();
            let target: Vec<&Example> = batch.target.iter().map(|&i| &data.target[i]).collect();
            let graph_seed = config.seed ^ ((epoch as u64) << 32) ^ step as u64;
            let (cls, dom, grads) = {
                let mut g = Graph::with_seed(model.store(), Mode::Train, graph_seed);
                let l = compute_losses(model, &mut g, &source, &target, config.rho, lambda)?;
                let (cls, dom) = (g.value(l.cls).item(), g.value(l.dom).item());
                if !cls.is_finite() || !dom.is_finite() {
                    return Err(TrainingError::NonFiniteLoss {
                        epoch,
                        step,
                        cls,
                        dom,
                    });
                }
                (cls, dom, g.backward(l.total)?.into_params())
            };
            model.store_mut().accumulate(&grads);
            adam.step(model.store_mut())?;
            sum_cls += cls;
            sum_dom += dom;
        }
        let l_cls = sum_cls / steps as f64;
        let l_dom = sum_dom / steps as f64;
        let dev_accuracy = evaluate_accuracy(model, &data.dev)?;
        let line = EpochLog {
            epoch,
            lambda,
            l_cls,
            l_dom,
            l_total: l_cls + config.rho * l_dom,
            dev_accuracy,
        };
        info!(
            "epoch {epoch}: lambda {lambda:.4} L_cls {l_cls:.4} L_dom {l_dom:.4} dev {dev_accuracy:.4}"
        );
        on_epoch(&line);
        state.history.push(line);
        state.epoch = epoch;
        if dev_accuracy > state.best_dev_accuracy {
            state.best_dev_accuracy = dev_accuracy;
            state.best_epoch = epoch;
            state.epochs_since_improvement = 0;
            best = model.snapshot();
        } else {
            state.epochs_since_improvement += 1;
            if state.epochs_since_improvement >= config.patience {
                state.stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }
    model.restore(&best)?;
    Ok(state)
}

/// Writes the history as one JSON object per line.
pub fn write_log(path: impl AsRef<Path>, history: &[EpochLog]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in history {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
