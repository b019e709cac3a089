//! Loss, optimizer, training loop and evaluation.

mod metrics;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::chemio::Split;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, MolPecoModel};
use crate::repr::cache::FeatureRecord;

pub use metrics::{
    confusion_counts, confusion_from_counts, confusion_metrics, pr_auc, roc_auc, Confusion, DescriptorReport,
    EvalReport, Metrics,
};

pub const LOSS_EPSILON: f64 = 1e-9;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub epsilon: f64,
    pub label_weights: Vec<f64>,
}

impl LossConfig {
    /// Weights `1 - n_pos / n_tot` counted over `indices` of `targets`.
    pub fn from_targets(targets: &[Vec<bool>], indices: &[usize], o: usize) -> Result<LossConfig> {
        if indices.is_empty() {
            return Err(Error::Data("label weights need at least one training molecule".into()));
        }
        let mut pos = vec![0usize; o];
        for &i in indices {
            let row = targets.get(i).ok_or_else(|| Error::Data(format!("molecule index {i} out of range")))?;
            if row.len() != o {
                return Err(Error::Shape(format!("target row has {} descriptors, expected {o}", row.len())));
            }
            for (p, &t) in pos.iter_mut().zip(row) {
                *p += t as usize;
            }
        }
        let n = indices.len() as f64;
        Ok(LossConfig { epsilon: LOSS_EPSILON, label_weights: pos.iter().map(|&p| 1.0 - p as f64 / n).collect() })
    }

    pub fn uniform(o: usize) -> LossConfig {
        LossConfig { epsilon: LOSS_EPSILON, label_weights: vec![1.0; o] }
    }
}

/// Weighted cross-entropy plus log regularization on probabilities, averaged over descriptors.
pub fn compute_loss(y_pred: &[f64], y_true: &[f64], cfg: &LossConfig) -> Result<f64> {
    let o = y_pred.len();
    if y_true.len() != o || cfg.label_weights.len() != o || o == 0 {
        return Err(Error::Shape(format!(
            "loss inputs disagree: {o} predictions, {} targets, {} weights",
            y_true.len(),
            cfg.label_weights.len()
        )));
    }
    let eps = cfg.epsilon;
    let mut total = 0.0;
    for ((&p, &t), &w) in y_pred.iter().zip(y_true).zip(&cfg.label_weights) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Numeric(format!("prediction {p} is outside (0, 1)")));
        }
        let bce = -(t * p.ln() + (1.0 - t) * (1.0 - p).ln());
        let reg = ((p + eps).ln() - (t + eps).ln()).abs();
        total += w * (bce + reg);
    }
    Ok(total / o as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamStore, cfg: AdamConfig) -> Adam {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.value.rows(), p.value.cols())).collect();
        Adam { cfg, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Nothing is changed when any gradient is not finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Matrix]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::Shape(format!("gradient shape mismatch for {}", p.name)));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for parameter {}", p.name)));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (slot, g) in grads.iter().enumerate() {
            let param = params.get_mut(slot);
            if !param.trainable {
                continue;
            }
            let (m, v) = (self.m[slot].as_mut_slice(), self.v[slot].as_mut_slice());
            for (((w, &g), m), v) in param.value.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, batch_size: 32, max_epochs: 1000, seed: 0, patience: 100 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auroc: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_auroc\n");
    for r in history {
        let auroc = r.val_auroc.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, auroc);
    }
    out
}

/// Molecules with their features and binary targets.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub features: &'a [FeatureRecord],
    pub targets: &'a [Vec<bool>],
    pub descriptors: &'a [String],
}

impl TrainData<'_> {
    fn check(&self) -> Result<()> {
        if self.features.len() != self.targets.len() {
            return Err(Error::Shape(format!(
                "{} feature records for {} target rows",
                self.features.len(),
                self.targets.len()
            )));
        }
        Ok(())
    }

    fn target(&self, i: usize) -> Vec<f64> {
        self.targets[i].iter().map(|&t| t as u8 as f64).collect()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with minimal validation loss, or the initial ones.
    pub best: MolPecoModel,
    /// 0 when no epoch completed.
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub loss: LossConfig,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Mean weighted loss over `indices`.
pub fn mean_loss(model: &MolPecoModel, data: &TrainData<'_>, indices: &[usize], loss: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        total += model.loss(&data.features[i], &data.target(i), &loss.label_weights, loss.epsilon)?;
    }
    Ok(total / indices.len().max(1) as f64)
}

/// Probabilities for each molecule in `indices`.
pub fn predict_all(model: &MolPecoModel, features: &[FeatureRecord], indices: &[usize]) -> Result<Vec<Vec<f64>>> {
    indices.iter().map(|&i| Ok(model.predict(&features[i])?.0)).collect()
}

pub fn evaluate(model: &MolPecoModel, data: &TrainData<'_>, indices: &[usize], threshold: f64) -> Result<EvalReport> {
    data.check()?;
    let scores = predict_all(model, data.features, indices)?;
    let labels: Vec<Vec<bool>> = indices.iter().map(|&i| data.targets[i].clone()).collect();
    EvalReport::from_scores(data.descriptors, &scores, &labels, threshold)
}

/// Trains a freshly initialized model and keeps the parameters with the lowest validation loss.
///
/// Model parameters are drawn from `train_cfg.seed`; the per-epoch shuffle
/// uses a separate stream of the same seed.
pub fn train_loop(
    data: &TrainData<'_>,
    split: &Split,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    data.check()?;
    train_cfg.validate()?;
    let n = data.features.len();
    if let Some(&i) = split.train.iter().chain(&split.val).find(|&&i| i >= n) {
        return Err(Error::Data(format!("split index {i} out of range for {n} molecules")));
    }
    if split.train.is_empty() || split.val.is_empty() {
        return Err(Error::Data("training needs nonempty train and validation parts".into()));
    }
    let model = MolPecoModel::new(model_cfg.clone(), train_cfg.seed)?;
    train_from(model, data, split, train_cfg)
}

/// Same as [`train_loop`] starting from given parameters.
pub fn train_from(
    mut model: MolPecoModel,
    data: &TrainData<'_>,
    split: &Split,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let o = model.config().o;
    let loss = LossConfig::from_targets(data.targets, &split.train, o)?;
    let mut adam =
        Adam::new(model.params(), AdamConfig { learning_rate: train_cfg.learning_rate, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(1);
    let mut order = split.train.clone();
    let mut outcome = TrainOutcome {
        best: model.clone(),
        best_epoch: 0,
        best_val_loss: None,
        history: Vec::new(),
        loss: loss.clone(),
        diverged: None,
    };
    let mut since_best = 0;
    'epochs: for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let mut grads: Option<Vec<Matrix>> = None;
            for &i in batch {
                let (l, g) =
                    model.loss_and_grads(&data.features[i], &data.target(i), &loss.label_weights, loss.epsilon)?;
                train_total += l;
                match &mut grads {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            a.add_assign(b)?;
                        }
                    }
                }
            }
            let mut grads = grads.expect("chunks are nonempty");
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| *g = g.scale(scale));
            if !train_total.is_finite() {
                outcome.diverged = Some(format!("training loss became non-finite in epoch {epoch}"));
                break 'epochs;
            }
            if let Err(e) = adam.step(model.params_mut(), &grads) {
                match e {
                    Error::Numeric(msg) => {
                        outcome.diverged = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    other => return Err(other),
                }
            }
        }
        let val_loss = mean_loss(&model, data, &split.val, &loss)?;
        if !val_loss.is_finite() {
            outcome.diverged = Some(format!("validation loss became non-finite in epoch {epoch}"));
            break;
        }
        let val_auroc = evaluate(&model, data, &split.val, DEFAULT_THRESHOLD)?.macro_auroc();
        outcome.history.push(EpochRecord { epoch, train_loss: train_total / order.len() as f64, val_loss, val_auroc });
        if outcome.best_val_loss.is_none_or(|b| val_loss < b) {
            outcome.best = model.clone();
            outcome.best_epoch = epoch;
            outcome.best_val_loss = Some(val_loss);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= train_cfg.patience {
                break;
            }
        }
    }
    Ok(outcome)
}
