//! Transfer learning on a frozen backbone: embedding extraction, mini-batch SGD on the
//! dense head, and evaluation.

mod eval;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{load_and_preprocess, DatasetManifest, Split};
use crate::model::{embed, ModelBundle, ModelError};
use crate::nnops::{argmax, cross_entropy, cross_entropy_grad, softmax, Dense, OpError};

pub use eval::{evaluate, evaluate_embeddings, predict, ClassAccuracy, EvalReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("class {0} has no training samples")]
    ClassWithoutSamples(usize),
    #[error("label {0} is out of range for {1} classes")]
    LabelOutOfRange(usize, usize),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("dataset label '{0}' is not known to the model")]
    UnknownLabel(String),
    #[error("the selected split is empty")]
    EmptySplit,
    #[error("embedding width {got} does not match expected {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("predictions and ground truth differ in length ({0} vs {1})")]
    PredictionCount(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("metrics output: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub shuffle_seed: u64,
    /// Train on per-dimension standardized embeddings and fold the affine map back into
    /// the returned head. Random frozen backbones emit poorly conditioned features; this
    /// preconditions SGD without changing the head's input space.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            shuffle_seed: 0,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config("momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean cross-entropy over the samples visited this epoch.
    pub loss: f64,
    /// Fraction of samples classified correctly when visited (before their update).
    pub train_accuracy: f64,
    /// Accuracy on the held-out set after the epoch, when one is supplied.
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractFailure {
    pub path: PathBuf,
    pub message: String,
}

/// Row-major matrix of embeddings with their class indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    labels: Vec<usize>,
    pub paths: Vec<PathBuf>,
    pub failures: Vec<ExtractFailure>,
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if data.len() != dim * labels.len() {
            return Err(TrainError::DimMismatch {
                expected: dim * labels.len(),
                got: data.len(),
            });
        }
        Ok(Self {
            dim,
            data,
            labels,
            paths: Vec::new(),
            failures: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Rows reordered so that new row `i` is old row `order[i]`.
    pub fn reordered(&self, order: &[usize]) -> Self {
        Self {
            dim: self.dim,
            data: order.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
            paths: if self.paths.len() == self.len() {
                order.iter().map(|&i| self.paths[i].clone()).collect()
            } else {
                Vec::new()
            },
            failures: self.failures.clone(),
        }
    }
}

/// Maps each manifest class to its index among the bundle labels.
pub(crate) fn label_map(bundle: &ModelBundle, manifest: &DatasetManifest) -> Result<Vec<usize>, TrainError> {
    manifest
        .classes
        .iter()
        .map(|c| {
            bundle
                .labels()
                .iter()
                .position(|l| l == c)
                .ok_or_else(|| TrainError::UnknownLabel(c.clone()))
        })
        .collect()
}

/// Backbone embeddings for the selected entries (`None` selects all), in manifest order.
///
/// Images are processed in parallel; each row depends only on its own image. Files that
/// fail to load are listed in `failures` and skipped.
pub fn extract_embeddings(
    bundle: &ModelBundle,
    manifest: &DatasetManifest,
    split: Option<Split>,
) -> Result<EmbeddingSet, TrainError> {
    let map = label_map(bundle, manifest)?;
    let resolution = bundle.arch().effective_resolution();
    let entries = manifest.select(split);
    let rows: Vec<Result<(Vec<f32>, usize), ExtractFailure>> = entries
        .par_iter()
        .map(|e| {
            let fail = |message: String| ExtractFailure {
                path: e.path.clone(),
                message,
            };
            let class = manifest
                .class_index(&e.label)
                .ok_or_else(|| fail(format!("unknown label '{}'", e.label)))?;
            let record = load_and_preprocess(&e.path, resolution).map_err(|err| fail(err.to_string()))?;
            let v = embed(bundle, &record.pixels).map_err(|err| fail(err.to_string()))?;
            Ok((v, map[class]))
        })
        .collect();

    let dim = bundle.arch().embedding_dim;
    let mut set = EmbeddingSet::new(dim, Vec::new(), Vec::new())?;
    for (entry, row) in entries.iter().zip(rows) {
        match row {
            Ok((v, label)) => {
                set.data.extend_from_slice(&v);
                set.labels.push(label);
                set.paths.push(entry.path.clone());
            }
            Err(f) => set.failures.push(f),
        }
    }
    Ok(set)
}

/// Visitation order for each epoch: a ChaCha8 stream seeded with `shuffle_seed` shuffles
/// `0..n` once per epoch, continuing the same stream.
pub fn epoch_orders(n: usize, cfg: &TrainConfig) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    (0..cfg.epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Per-dimension mean and standard deviation of an embedding set.
///
/// Each column is summed in sorted order, so the result does not depend on row order.
/// Dimensions with (near) zero spread keep a unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardizer {
    const MIN_STD: f64 = 1e-6;

    pub fn fit(set: &EmbeddingSet) -> Self {
        let n = set.len().max(1) as f64;
        let mut column = Vec::with_capacity(set.len());
        let mut mean = Vec::with_capacity(set.dim());
        let mut std = Vec::with_capacity(set.dim());
        for j in 0..set.dim() {
            column.clear();
            column.extend((0..set.len()).map(|i| set.row(i)[j] as f64));
            column.sort_by(f64::total_cmp);
            let mu = column.iter().sum::<f64>() / n;
            let mut dev: Vec<f64> = column.iter().map(|v| (v - mu) * (v - mu)).collect();
            dev.sort_by(f64::total_cmp);
            let sd = (dev.iter().sum::<f64>() / n).sqrt();
            mean.push(mu as f32);
            std.push(if sd > Self::MIN_STD { sd as f32 } else { 1.0 });
        }
        Self { mean, std }
    }

    pub fn apply(&self, set: &EmbeddingSet) -> EmbeddingSet {
        let data = set
            .data()
            .chunks_exact(set.dim().max(1))
            .flat_map(|row| {
                row.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(&v, (&m, &s))| (v - m) / s)
            })
            .collect();
        EmbeddingSet {
            dim: set.dim(),
            data,
            labels: set.labels.clone(),
            paths: set.paths.clone(),
            failures: set.failures.clone(),
        }
    }

    /// Head on raw embeddings equivalent to `head` applied to standardized ones:
    /// `W[j,k] = V[j,k] / σ_j`, `b[k] = c[k] − Σ_j μ_j · W[j,k]`.
    pub fn fold(&self, head: &Dense<f32>) -> Result<Dense<f32>, TrainError> {
        let k = head.out_dim();
        let mut weights = head.weights().to_vec();
        let mut shift = vec![0.0f64; k];
        for (j, row) in weights.chunks_exact_mut(k.max(1)).enumerate() {
            for (w, acc) in row.iter_mut().zip(shift.iter_mut()) {
                *w /= self.std[j];
                *acc += self.mean[j] as f64 * *w as f64;
            }
        }
        let bias = head
            .bias()
            .iter()
            .zip(&shift)
            .map(|(&b, &s)| (b as f64 - s) as f32)
            .collect();
        Ok(Dense::new(head.in_dim(), k, weights, bias)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: Dense<f32>,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains a zero-initialized softmax head with SGD + momentum on cross-entropy.
///
/// Sequential and single-threaded; the result is a pure function of the inputs and `cfg`.
pub fn train_head(
    train: &EmbeddingSet,
    num_classes: usize,
    cfg: &TrainConfig,
    test: Option<&EmbeddingSet>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let orders = epoch_orders(train.len(), cfg);
    train_head_in_order(train, num_classes, cfg, test, &orders)
}

/// [`train_head`] with explicit per-epoch visitation orders.
pub fn train_head_in_order(
    train: &EmbeddingSet,
    num_classes: usize,
    cfg: &TrainConfig,
    test: Option<&EmbeddingSet>,
    orders: &[Vec<usize>],
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if orders.len() != cfg.epochs {
        return Err(TrainError::Config(format!(
            "{} visitation orders for {} epochs",
            orders.len(),
            cfg.epochs
        )));
    }
    let mut present = vec![false; num_classes];
    for &l in train.labels() {
        *present
            .get_mut(l)
            .ok_or(TrainError::LabelOutOfRange(l, num_classes))? = true;
    }
    if let Some(missing) = present.iter().position(|p| !p) {
        return Err(TrainError::ClassWithoutSamples(missing));
    }
    if let Some(t) = test {
        if t.dim() != train.dim() {
            return Err(TrainError::DimMismatch {
                expected: train.dim(),
                got: t.dim(),
            });
        }
    }
    if cfg.standardize {
        let st = Standardizer::fit(train);
        let test = test.map(|t| st.apply(t));
        let plain = TrainConfig {
            standardize: false,
            ..*cfg
        };
        let outcome = train_head_in_order(&st.apply(train), num_classes, &plain, test.as_ref(), orders)?;
        return Ok(TrainOutcome {
            head: st.fold(&outcome.head)?,
            metrics: outcome.metrics,
        });
    }

    let dim = train.dim();
    let mut head = Dense::<f32>::zeros(dim, num_classes);
    let mut vel_w = vec![0.0f32; dim * num_classes];
    let mut vel_b = vec![0.0f32; num_classes];
    let mut grad_w = vec![0.0f32; dim * num_classes];
    let mut grad_b = vec![0.0f32; num_classes];
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for (epoch, order) in orders.iter().enumerate() {
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad_w.fill(0.0);
            grad_b.fill(0.0);
            for &i in batch {
                let x = train.row(i);
                let target = train.labels()[i];
                let probs = softmax(&head.forward(x)?)?;
                let loss = cross_entropy(&probs, target)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: batch_idx,
                    });
                }
                loss_sum += loss as f64;
                if argmax(&probs) == Some(target) {
                    correct += 1;
                }
                let g = head.backward(x, &cross_entropy_grad(&probs, target)?)?;
                for (acc, v) in grad_w.iter_mut().zip(&g.weights) {
                    *acc += v;
                }
                for (acc, v) in grad_b.iter_mut().zip(&g.bias) {
                    *acc += v;
                }
            }
            let inv = 1.0 / batch.len() as f32;
            for ((w, v), g) in head.weights_mut().iter_mut().zip(&mut vel_w).zip(&grad_w) {
                *v = cfg.momentum * *v + g * inv;
                *w -= cfg.learning_rate * *v;
            }
            for ((b, v), g) in head.bias_mut().iter_mut().zip(&mut vel_b).zip(&grad_b) {
                *v = cfg.momentum * *v + g * inv;
                *b -= cfg.learning_rate * *v;
            }
        }
        let n = order.len().max(1) as f64;
        let test_accuracy = match test {
            Some(t) if !t.is_empty() => Some(accuracy(&head, t)?),
            _ => None,
        };
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            test_accuracy,
        });
    }
    Ok(TrainOutcome { head, metrics })
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(head: &Dense<f32>, set: &EmbeddingSet) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let preds = predict(head, set)?;
    let correct = preds.iter().zip(set.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / set.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub batch_size: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Trains one head per batch size with otherwise identical configuration and seeds.
pub fn batch_size_sweep(
    train: &EmbeddingSet,
    test: &EmbeddingSet,
    num_classes: usize,
    sizes: &[usize],
    cfg: &TrainConfig,
) -> Result<Vec<SweepRow>, TrainError> {
    if sizes.is_empty() {
        return Err(TrainError::Config("batch size list is empty".into()));
    }
    sizes
        .iter()
        .map(|&batch_size| {
            let cfg = TrainConfig { batch_size, ..*cfg };
            let outcome = train_head(train, num_classes, &cfg, None)?;
            Ok(SweepRow {
                batch_size,
                train_accuracy: outcome.metrics.last().map_or(0.0, |m| m.train_accuracy),
                test_accuracy: accuracy(&outcome.head, test)?,
            })
        })
        .collect()
}

/// Writes `epoch,loss,train_acc,test_acc` rows; `test_acc` is empty when absent.
pub fn write_metrics_csv<W: Write>(writer: W, metrics: &[EpochMetrics]) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "loss", "train_acc", "test_acc"])?;
    for m in metrics {
        w.write_record([
            m.epoch.to_string(),
            m.loss.to_string(),
            m.train_accuracy.to_string(),
            m.test_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
