//! Gradient clipping, Adam, and the epoch training loop.

use super::backward::backward;
use super::forward::{forward_sequence, Mode};
use super::params::ModelParams;
use super::{hmse_loss, TrainConfig};
use crate::seed;
use crate::{Error, Result};

/// Adam moment estimates over the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// Scale the whole flat gradient so its global L2 norm does not exceed
/// `threshold`; direction is preserved.
pub fn clip_gradients(grad: &mut [f64], threshold: f64) {
    debug_assert!(threshold > 0.0);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grad: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: params {}, grad {}, state {}",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as f64;
    let bc1 = 1.0 - beta1.powf(t);
    let bc2 = 1.0 - beta2.powf(t);
    for i in 0..params.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Train in place for `cfg.epochs` full-sequence passes over a normalized
/// series; returns the per-epoch loss trace. Target is the series shifted
/// one slot left. Adam state is fresh per call.
pub fn train_epochs(
    series: &[f64],
    model: &mut ModelParams,
    cfg: &TrainConfig,
    train_seed: u64,
) -> Result<Vec<f64>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if series.len() < 2 {
        return Err(Error::Config(
            "training series must contain at least 2 slots".into(),
        ));
    }
    let target = &series[1..];
    let n = target.len() as f64;
    let mut flat = model.flatten();
    let mut state = AdamState::new(flat.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let dropout_seed = seed::derive(train_seed, &[seed::tag("epoch"), epoch as u64]);
        let (preds, cache) =
            forward_sequence(series, model, cfg.dropout_p, Mode::Train, dropout_seed)?;
        let loss = hmse_loss(&preds[..target.len()], target)?;
        trace.push(loss);

        let mut d_preds: Vec<f64> = preds
            .iter()
            .take(target.len())
            .zip(target)
            .map(|(p, t)| (p - t) / n)
            .collect();
        d_preds.resize(preds.len(), 0.0);

        let mut grad = backward(model, &cache.expect("train mode caches"), &d_preds)?;
        clip_gradients(&mut grad, cfg.grad_threshold);
        adam_step(
            &mut flat,
            &grad,
            &mut state,
            cfg.lr_at_epoch(epoch),
            cfg.beta1,
            cfg.beta2,
            cfg.epsilon,
        )?;
        *model = ModelParams::unflatten(&model.net, &flat)?;
    }
    Ok(trace)
}
