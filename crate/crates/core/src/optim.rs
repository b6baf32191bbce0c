//! Adam updates, validation-loss early stopping and the mini-batch training loop.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::layers::softmax_cross_entropy;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one graph.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(graph: &Graph, config: AdamConfig) -> Self {
        let zeros = || {
            graph
                .parameters()
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update to every parameter of `graph`
    /// using the gradients from its last backward pass.
    pub fn step(&mut self, graph: &mut Graph) -> Result<()> {
        let params = graph.parameters_mut();
        if params.len() != self.first.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, graph has {}",
                self.first.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first) {
            if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(Error::State(format!(
                    "parameter shape {:?} drifted from optimizer slot {:?}",
                    p.value.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correct1 = 1.0 - beta1.powi(t);
        let correct2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params
            .into_iter()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let grad = p.grad.data();
            for (((w, &g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

/// Stops training once the validation loss has failed to improve by more than
/// `min_delta` for `patience` consecutive epochs, or after `max_epochs`.
#[derive(Debug, Clone)]
pub struct EarlyStopPolicy {
    pub min_delta: f64,
    pub patience: usize,
    pub max_epochs: usize,
    best_loss: f64,
    since_improvement: usize,
    observed: usize,
}

impl EarlyStopPolicy {
    pub fn new(min_delta: f64, patience: usize, max_epochs: usize) -> Self {
        EarlyStopPolicy {
            min_delta,
            patience,
            max_epochs,
            best_loss: f64::INFINITY,
            since_improvement: 0,
            observed: 0,
        }
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }

    pub fn epochs_since_improvement(&self) -> usize {
        self.since_improvement
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    /// Records one epoch's validation loss. An improvement must beat the best
    /// loss so far by strictly more than `min_delta`; a gain equal to
    /// `min_delta` up to floating-point round-off does not count.
    pub fn update(&mut self, val_loss: f64) -> Result<StopDecision> {
        if !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "validation loss became {val_loss} after {} epochs",
                self.observed
            )));
        }
        self.observed += 1;
        let gain = self.best_loss - val_loss;
        let slack = 1e-12 * self.best_loss.abs().max(1.0);
        if gain.is_infinite() || gain - self.min_delta > slack {
            self.best_loss = val_loss;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        if self.since_improvement >= self.patience || self.observed >= self.max_epochs {
            Ok(StopDecision::Stop)
        } else {
            Ok(StopDecision::Continue)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Shuffling seed. Runs derive it from their own seed, so it is not
    /// part of the serialized config.
    #[serde(skip)]
    pub seed: u64,
}

impl TrainConfig {
    /// Camera CNN protocol: 600 epochs, patience 20, min-delta 0.01.
    pub fn cnn() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 600,
            patience: 20,
            min_delta: 0.01,
            seed: 0,
        }
    }

    /// Depth MLP protocol: as [`TrainConfig::cnn`] with patience 150.
    pub fn mlp() -> Self {
        TrainConfig {
            patience: 150,
            ..Self::cnn()
        }
    }

    /// Joint fusion graph: patience 150, since it contains the MLP branch.
    pub fn fusion() -> Self {
        Self::mlp()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Inputs for a graph keyed by entry name, each batched along axis 0, with one
/// label per row.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    inputs: Vec<(String, Tensor)>,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(inputs: Vec<(String, Tensor)>, labels: Vec<usize>) -> Result<Self> {
        for (name, t) in &inputs {
            if t.shape().first() != Some(&labels.len()) {
                return Err(Error::Dimension(format!(
                    "input {name} has {:?} rows for {} labels",
                    t.shape().first(),
                    labels.len()
                )));
            }
        }
        Ok(LabeledSet { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given rows into a batch for [`Graph::forward`].
    pub fn batch(&self, rows: &[usize]) -> Result<HashMap<String, Tensor>> {
        if rows.is_empty() {
            return Err(Error::Argument("empty batch".into()));
        }
        let mut out = HashMap::with_capacity(self.inputs.len());
        for (name, t) in &self.inputs {
            let width = t.len() / self.labels.len();
            let mut data = Vec::with_capacity(rows.len() * width);
            for &r in rows {
                data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
            }
            let mut shape = t.shape().to_vec();
            shape[0] = rows.len();
            out.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    pub fn batch_labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

/// Per-epoch losses of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.val_loss.len()
    }
}

const EVAL_CHUNK: usize = 128;

/// Logits of `graph` for every row of `set`, evaluated in chunks.
pub fn predict_logits(graph: &Graph, set: &LabeledSet) -> Result<Tensor> {
    let rows: Vec<usize> = (0..set.len()).collect();
    let mut data = Vec::new();
    let mut classes = 0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let out = graph.infer(&set.batch(chunk)?)?;
        classes = out.shape()[1];
        data.extend_from_slice(out.data());
    }
    Tensor::new(vec![set.len(), classes], data)
}

/// Mean cross-entropy of `graph` on `set`.
pub fn evaluate_loss(graph: &Graph, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty set".into()));
    }
    let logits = predict_logits(graph, set)?;
    Ok(softmax_cross_entropy(&logits, set.labels())?.loss)
}

/// Trains `graph` with Adam on shuffled mini-batches, evaluating the validation
/// loss after every epoch and stopping per [`EarlyStopPolicy`]. The graph keeps
/// the parameters of the final epoch.
pub fn train(
    graph: &mut Graph,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &TrainConfig,
) -> Result<History> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Argument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    let mut history = History::default();
    if cfg.max_epochs == 0 {
        return Ok(history);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(graph, cfg.adam);
    let mut policy = EarlyStopPolicy::new(cfg.min_delta, cfg.patience, cfg.max_epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    loop {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for rows in order.chunks(cfg.batch_size) {
            let logits = graph.forward(&train_set.batch(rows)?)?;
            let ce = softmax_cross_entropy(&logits, &train_set.batch_labels(rows))?;
            if !ce.loss.is_finite() {
                return Err(Error::Training(format!(
                    "training loss became {} in epoch {}",
                    ce.loss,
                    history.epochs() + 1
                )));
            }
            total += ce.loss * rows.len() as f64;
            graph.backward(&ce.grad)?;
            adam.step(graph)?;
        }
        history.train_loss.push(total / train_set.len() as f64);
        let val = evaluate_loss(graph, val_set)?;
        history.val_loss.push(val);
        if policy.update(val)? == StopDecision::Stop {
            history.stopped_early = history.epochs() < cfg.max_epochs;
            return Ok(history);
        }
    }
}
