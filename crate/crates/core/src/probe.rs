//! Linear probes: softmax (multiclass) or independent sigmoid (multilabel)
//! classifiers trained on frozen embeddings.
//!
//! The objective is the mean cross-entropy over a batch plus
//! `l2_lambda * ||W||_F^2`; the bias is not regularized. Weights start at
//! zero and are updated by mini-batch gradient descent with momentum. When a
//! validation set is given, the learning rate is halved after the selection
//! metric stalls and the epoch with the best validation score is returned.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingSet};
use crate::error::{Error, Result};
use crate::matrix_io::Cursor;
use crate::metrics::{self, MetricKind, ScoreTable};

pub const MODEL_MAGIC: &[u8; 4] = b"APRB";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// One label per item, softmax outputs.
    Multiclass,
    /// Any number of labels per item, independent sigmoid outputs.
    Multilabel,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Multiclass => "multiclass",
            TaskKind::Multilabel => "multilabel",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "multiclass" => Ok(TaskKind::Multiclass),
            "multilabel" => Ok(TaskKind::Multilabel),
            other => Err(Error::InvalidConfig(format!("unknown task kind `{other}`"))),
        }
    }
}

/// A linear classifier `scores = act(W e + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    weights: Array2<f64>,
    bias: Array1<f64>,
    task: TaskKind,
    class_names: Vec<String>,
}

impl ProbeModel {
    pub fn new(
        weights: Array2<f64>,
        bias: Array1<f64>,
        task: TaskKind,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (c, _) = weights.dim();
        let min_classes = match task {
            TaskKind::Multiclass => 2,
            TaskKind::Multilabel => 1,
        };
        if c < min_classes {
            return Err(Error::InvalidConfig(format!(
                "a {task} probe needs at least {min_classes} classes, got {c}"
            )));
        }
        if bias.len() != c || class_names.len() != c {
            return Err(Error::ShapeError(format!(
                "{c} weight rows, {} biases, {} class names",
                bias.len(),
                class_names.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DomainError("probe parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            bias,
            task,
            class_names,
        })
    }

    pub fn zeros(task: TaskKind, class_names: Vec<String>, dim: usize) -> Result<Self> {
        let c = class_names.len();
        Self::new(Array2::zeros((c, dim)), Array1::zeros(c), task, class_names)
    }

    /// `C × D` weight matrix; row `c` belongs to `class_names()[c]`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.weights.dot(&Array1::from(x.to_vec())) + &self.bias)
    }

    /// Class probabilities for a batch of row vectors.
    pub fn predict_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let mut z = x.dot(&self.weights.t()) + &self.bias;
        activate(self.task, &mut z);
        Ok(z)
    }

    pub fn predict_set(&self, set: &EmbeddingSet) -> Result<Array2<f64>> {
        self.predict_matrix(&feature_matrix(set))
    }
}

/// Class probabilities for one embedding.
pub fn predict(model: &ProbeModel, e: &Embedding) -> Result<Vec<f64>> {
    let mut z = model.logits(&e.vector)?.insert_axis(Axis(0));
    activate(model.task, &mut z);
    Ok(z.into_raw_vec_and_offset().0)
}

fn activate(task: TaskKind, z: &mut Array2<f64>) {
    match task {
        TaskKind::Multiclass => {
            for mut row in z.rows_mut() {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                row.mapv_inplace(|v| (v - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
        }
        TaskKind::Multilabel => z.mapv_inplace(sigmoid),
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn feature_matrix(set: &EmbeddingSet) -> Array2<f64> {
    let flat: Vec<f64> = set.items().iter().flat_map(|e| e.vector.iter().copied()).collect();
    Array2::from_shape_vec((set.len(), set.dim()), flat).expect("set rows share one dimension")
}

/// Embeddings with per-item class indices.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub embeddings: EmbeddingSet,
    pub labels: Vec<Vec<usize>>,
}

impl LabeledSet {
    pub fn new(embeddings: EmbeddingSet, labels: Vec<Vec<usize>>) -> Result<Self> {
        if embeddings.len() != labels.len() {
            return Err(Error::ShapeError(format!(
                "{} embeddings but {} label lists",
                embeddings.len(),
                labels.len()
            )));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check_labels(&self, task: TaskKind, n_classes: usize) -> Result<()> {
        for (item, labels) in self.embeddings.items().iter().zip(&self.labels) {
            if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
                return Err(Error::LabelError(format!(
                    "`{}` has label {l} outside {n_classes} classes",
                    item.clip_id
                )));
            }
            if task == TaskKind::Multiclass && labels.len() != 1 {
                return Err(Error::LabelError(format!(
                    "multiclass item `{}` has {} labels",
                    item.clip_id,
                    labels.len()
                )));
            }
        }
        Ok(())
    }

    /// Binary target matrix, items by classes.
    pub fn truth_matrix(&self, n_classes: usize) -> Array2<bool> {
        let mut t = Array2::from_elem((self.len(), n_classes), false);
        for (i, labels) in self.labels.iter().enumerate() {
            for &l in labels {
                t[[i, l]] = true;
            }
        }
        t
    }

    pub fn score_table(&self, model: &ProbeModel) -> Result<ScoreTable> {
        ScoreTable::new(
            model.predict_set(&self.embeddings)?,
            self.truth_matrix(model.n_classes()),
            model.class_names.clone(),
        )
    }
}

/// A dense mini-batch: features `n × D` and 0/1 targets `n × C`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn from_labeled(set: &LabeledSet, n_classes: usize) -> Self {
        Self {
            features: feature_matrix(&set.embeddings),
            targets: set.truth_matrix(n_classes).mapv(|t| if t { 1.0 } else { 0.0 }),
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    fn rows(&self, idx: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
        }
    }
}

/// Objective value and its exact gradient with respect to `W` and `b`.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_weights: Array2<f64>,
    pub grad_bias: Array1<f64>,
}

pub fn loss_and_grad(model: &ProbeModel, batch: &Batch, l2_lambda: f64) -> LossGrad {
    let n = batch.len().max(1) as f64;
    let z = batch.features.dot(&model.weights.t()) + &model.bias;
    let y = &batch.targets;
    let mut data_loss = 0.0;
    let mut residual = Array2::zeros(z.raw_dim());

    match model.task {
        TaskKind::Multiclass => {
            for ((zr, yr), mut rr) in z.rows().into_iter().zip(y.rows()).zip(residual.rows_mut()) {
                let max = zr.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + zr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for ((r, &zc), &yc) in rr.iter_mut().zip(zr).zip(yr) {
                    data_loss -= yc * (zc - lse);
                    *r = (zc - lse).exp() - yc;
                }
            }
        }
        TaskKind::Multilabel => {
            for ((r, &zc), &yc) in residual.iter_mut().zip(&z).zip(y) {
                data_loss += softplus(zc) - yc * zc;
                *r = sigmoid(zc) - yc;
            }
        }
    }

    let reg = model.weights.iter().map(|w| w * w).sum::<f64>();
    let grad_weights = residual.t().dot(&batch.features) / n + &model.weights * (2.0 * l2_lambda);
    let grad_bias = residual.sum_axis(Axis(0)) / n;
    LossGrad {
        loss: data_loss / n + l2_lambda * reg,
        grad_weights,
        grad_bias,
    }
}

/// Optimization settings for [`train_probe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Halve the learning rate after this many epochs without a validation
    /// improvement; 0 disables halving.
    pub halve_patience: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation improvement; 0 never stops early.
    pub early_stop_patience: usize,
    /// Validation metric used to pick the returned epoch; defaults per task.
    pub selection: Option<MetricKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-4,
            max_epochs: 200,
            learning_rate: 0.5,
            momentum: 0.9,
            halve_patience: 10,
            batch_size: 0,
            seed: 0,
            early_stop_patience: 40,
            selection: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("l2_lambda must be >= 0, got {}", self.l2_lambda)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Result of [`train_probe`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: ProbeModel,
    /// Epoch of the returned snapshot (0 = initial zero model).
    pub best_epoch: usize,
    /// Validation score of the returned snapshot.
    pub best_metric: Option<f64>,
    pub selection: MetricKind,
    /// Full-training-set objective after each epoch, starting with the initial model.
    pub losses: Vec<f64>,
}

pub fn train_probe(
    train: &LabeledSet,
    val: Option<&LabeledSet>,
    task: TaskKind,
    class_names: &[String],
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let n_classes = class_names.len();
    train.check_labels(task, n_classes)?;
    let val = val.filter(|v| !v.is_empty());
    if let Some(v) = val {
        v.check_labels(task, n_classes)?;
        if v.embeddings.dim() != train.embeddings.dim() {
            return Err(Error::DimMismatch {
                expected: train.embeddings.dim(),
                found: v.embeddings.dim(),
            });
        }
    }
    let selection = cfg.selection.unwrap_or(MetricKind::default_for(task));
    if !selection.applies_to(task, n_classes) {
        return Err(Error::UnknownMetric(format!("{selection} cannot select a {task} probe")));
    }

    let mut model = ProbeModel::zeros(task, class_names.to_vec(), train.embeddings.dim())?;
    let data = Batch::from_labeled(train, n_classes);
    let mut vel_w = Array2::<f64>::zeros(model.weights.raw_dim());
    let mut vel_b = Array1::<f64>::zeros(model.bias.raw_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_size = if cfg.batch_size == 0 { data.len() } else { cfg.batch_size.min(data.len()) };
    let mut lr = cfg.learning_rate;

    let score = |m: &ProbeModel, v: &LabeledSet| -> Result<f64> {
        let table = v.score_table(m)?;
        Ok(metrics::evaluate(&table, task, &[selection])?.values[&selection])
    };

    let mut losses = vec![loss_and_grad(&model, &data, cfg.l2_lambda).loss];
    let mut best = match val {
        Some(v) => Some((score(&model, v)?, 0usize, model.clone())),
        None => None,
    };
    let mut stall = 0usize;
    let mut stall_since_halve = 0usize;
    let mut last_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        if batch_size < data.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch_size) {
            let g = if batch_size == data.len() {
                loss_and_grad(&model, &data, cfg.l2_lambda)
            } else {
                loss_and_grad(&model, &data.rows(chunk), cfg.l2_lambda)
            };
            vel_w = &vel_w * cfg.momentum - &g.grad_weights * lr;
            vel_b = &vel_b * cfg.momentum - &g.grad_bias * lr;
            model.weights += &vel_w;
            model.bias += &vel_b;
        }
        losses.push(loss_and_grad(&model, &data, cfg.l2_lambda).loss);
        last_epoch = epoch;
        if !losses.last().unwrap().is_finite() {
            return Err(Error::DomainError(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }

        if let (Some(v), Some(b)) = (val, best.as_mut()) {
            let s = score(&model, v)?;
            if s > b.0 {
                *b = (s, epoch, model.clone());
                stall = 0;
                stall_since_halve = 0;
            } else {
                stall += 1;
                stall_since_halve += 1;
                if cfg.halve_patience > 0 && stall_since_halve >= cfg.halve_patience {
                    lr *= 0.5;
                    stall_since_halve = 0;
                }
                if cfg.early_stop_patience > 0 && stall >= cfg.early_stop_patience {
                    break;
                }
            }
        }
    }

    Ok(match best {
        Some((metric, epoch, snapshot)) => Trained {
            model: snapshot,
            best_epoch: epoch,
            best_metric: Some(metric),
            selection,
            losses,
        },
        None => Trained {
            model,
            best_epoch: last_epoch,
            best_metric: None,
            selection,
            losses,
        },
    })
}

#[derive(Serialize, Deserialize)]
struct ModelTrailer {
    task: TaskKind,
    class_names: Vec<String>,
}

/// Serializes a model into the `APRB` container: magic, u32 version, u32 D,
/// u64 C, `C × D` f64 weights, `C` f64 biases, JSON trailer (task, class
/// names), and the trailer offset as a final u64.
pub fn encode_model(model: &ProbeModel) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + (model.weights.len() + model.bias.len()) * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.n_classes() as u64).to_le_bytes());
    for v in model.weights.iter().chain(model.bias.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let offset = out.len() as u64;
    serde_json::to_writer(
        &mut out,
        &ModelTrailer {
            task: model.task,
            class_names: model.class_names.clone(),
        },
    )?;
    out.extend_from_slice(&offset.to_le_bytes());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ProbeModel> {
    let mut cur = Cursor::new(bytes);
    cur.expect_magic(MODEL_MAGIC)?;
    cur.expect_version(MODEL_VERSION)?;
    let dim = cur.u32()? as usize;
    let classes = cur.u64()? as usize;
    let n_values = classes
        .checked_mul(dim)
        .and_then(|n| n.checked_add(classes))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::TruncatedFile("declared model size overflows".into()))?;
    if n_values.saturating_add(8) > cur.remaining() {
        return Err(Error::TruncatedFile(format!(
            "{classes} × {dim} model needs {n_values} bytes, {} available",
            cur.remaining()
        )));
    }
    let payload: Vec<f64> = cur
        .take(n_values)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let trailer_start = cur.position();
    let mut tail = Cursor::new(bytes);
    tail.seek(bytes.len() - 8)?;
    if tail.u64()? as usize != trailer_start {
        return Err(Error::FormatError("trailer offset does not follow the payload".into()));
    }
    let trailer: ModelTrailer = serde_json::from_slice(&bytes[trailer_start..bytes.len() - 8])
        .map_err(|e| Error::FormatError(format!("bad trailer: {e}")))?;

    let (w, b) = payload.split_at(classes * dim);
    let weights = Array2::from_shape_vec((classes, dim), w.to_vec())
        .map_err(|e| Error::FormatError(e.to_string()))?;
    ProbeModel::new(weights, Array1::from(b.to_vec()), trailer.task, trailer.class_names)
}

pub fn write_model(model: &ProbeModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ProbeModel> {
    decode_model(&fs::read(path)?)
}
