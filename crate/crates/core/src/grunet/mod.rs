//! From-scratch GRU sequence-regression engine.
//!
//! Three stacked GRU layers feed a scalar dense head; training is full
//! sequence backpropagation through time with half-mean-squared-error,
//! Adam, global L2 gradient clipping, and a stepped learning-rate
//! schedule. All arithmetic is f64.

mod backward;
mod forward;
mod math;
mod optim;
mod params;

pub use backward::backward;
pub use forward::{
    eval_loss, forward_sequence, gru_cell_step, predict_future, ForwardCache, Mode, RunState,
};
pub use math::Mat;
pub use optim::{adam_step, clip_gradients, train_epochs, AdamState};
pub use params::{
    load_checkpoint, save_checkpoint, GruLayerParams, ModelParams, NetConfig,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Training hyperparameters. Defaults follow the reference experimental
/// setup: batch 200 predicting 20, 200 epochs at lr 0.01 dropping by 0.2
/// every 125 epochs, gradient threshold 1, dropout 0.2.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_len: usize,
    pub horizon: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_drop_factor: f64,
    pub lr_drop_period: usize,
    pub grad_threshold: f64,
    pub dropout_p: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_len: 200,
            horizon: 20,
            epochs: 200,
            lr: 0.01,
            lr_drop_factor: 0.2,
            lr_drop_period: 125,
            grad_threshold: 1.0,
            dropout_p: 0.2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must lie in [0, 1)".into()));
        }
        if self.horizon > self.batch_len {
            return Err(Error::Config("horizon must not exceed batch_len".into()));
        }
        if self.batch_len < 2 {
            return Err(Error::Config("batch_len must be >= 2".into()));
        }
        if self.grad_threshold <= 0.0 {
            return Err(Error::Config("grad_threshold must be positive".into()));
        }
        if self.lr_drop_period == 0 {
            return Err(Error::Config("lr_drop_period must be >= 1".into()));
        }
        self.net.validate()
    }

    /// Learning rate in effect for a 1-based epoch index.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        debug_assert!(epoch >= 1);
        let drops = (epoch - 1) / self.lr_drop_period;
        self.lr * self.lr_drop_factor.powi(drops as i32)
    }
}

/// Half-mean-squared-error over a prediction/target pair of sequences.
pub fn hmse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "hmse length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("hmse on empty sequences".into()));
    }
    let s = pred.len() as f64;
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / (2.0 * s))
}
