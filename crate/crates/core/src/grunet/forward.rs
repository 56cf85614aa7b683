//! Forward pass: single cell step, full-sequence teacher-forced pass with
//! activation caching, and autoregressive multi-step prediction.

use rand::Rng;

use super::math::{sigmoid, Mat};
use super::params::{GruLayerParams, ModelParams};
use super::hmse_loss;
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub(crate) struct CellParts {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<f64>,
    /// u = Uc·h_prev, kept for the reset-gate backward path.
    pub u: Vec<f64>,
    pub h: Vec<f64>,
}

fn gate_preact(w: &Mat, u: &Mat, b: &Option<Vec<f64>>, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let mut a = match b {
        Some(bias) => bias.clone(),
        None => vec![0.0; w.rows],
    };
    w.matvec_add(x, &mut a);
    u.matvec_add(h_prev, &mut a);
    a
}

pub(crate) fn cell_step_parts(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> CellParts {
    let mut z = gate_preact(&p.wz, &p.uz, &p.bz, x, h_prev);
    for v in z.iter_mut() {
        *v = sigmoid(*v);
    }
    let mut r = gate_preact(&p.wr, &p.ur, &p.br, x, h_prev);
    for v in r.iter_mut() {
        *v = sigmoid(*v);
    }
    let mut u = vec![0.0; p.hidden_size];
    p.uc.matvec_add(h_prev, &mut u);
    let mut c = match &p.bc {
        Some(bias) => bias.clone(),
        None => vec![0.0; p.hidden_size],
    };
    p.wc.matvec_add(x, &mut c);
    for i in 0..p.hidden_size {
        c[i] = (c[i] + r[i] * u[i]).tanh();
    }
    // h = z ⊙ h_prev + (1−z) ⊙ c : the update gate keeps the old state.
    let h: Vec<f64> = (0..p.hidden_size)
        .map(|i| z[i] * h_prev[i] + (1.0 - z[i]) * c[i])
        .collect();
    CellParts { z, r, c, u, h }
}

/// One GRU cell step: h_t from (x_t, h_{t-1}).
pub fn gru_cell_step(x: &[f64], h_prev: &[f64], p: &GruLayerParams) -> Result<Vec<f64>> {
    if x.len() != p.input_size || h_prev.len() != p.hidden_size {
        return Err(Error::Shape(format!(
            "cell step: got x[{}], h[{}], expected x[{}], h[{}]",
            x.len(),
            h_prev.len(),
            p.input_size,
            p.hidden_size
        )));
    }
    Ok(cell_step_parts(x, h_prev, p).h)
}

/// Per-layer activation record for one full sequence pass.
pub struct LayerCache {
    pub inputs: Vec<Vec<f64>>,
    pub h_prev: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
}

/// Everything backward needs from a train-mode forward pass.
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    /// Inverted-dropout multipliers (0 or 1/(1-p)) applied to the outputs
    /// of every layer except the last, per boundary then per timestep.
    pub masks: Vec<Vec<Vec<f64>>>,
    pub preds: Vec<f64>,
}

/// Teacher-forced pass over a normalized series. Output t is the model's
/// prediction of slot t+1. Train mode applies inverted dropout between
/// GRU layers and returns the activation cache.
pub fn forward_sequence(
    series: &[f64],
    model: &ModelParams,
    dropout_p: f64,
    mode: Mode,
    dropout_seed: u64,
) -> Result<(Vec<f64>, Option<ForwardCache>)> {
    if model.net.input_size != 1 {
        return Err(Error::Shape("sequence forward expects scalar input".into()));
    }
    if series.is_empty() {
        return Err(Error::Shape("empty input sequence".into()));
    }
    let s = series.len();
    let n_layers = model.layers.len();
    let train = mode == Mode::Train;
    let keep = 1.0 - dropout_p;
    let mut rng = seed::rng_for(dropout_seed, &[seed::tag("dropout")]);

    let mut caches: Vec<LayerCache> = model
        .layers
        .iter()
        .map(|_| LayerCache {
            inputs: Vec::with_capacity(s),
            h_prev: Vec::with_capacity(s),
            z: Vec::with_capacity(s),
            r: Vec::with_capacity(s),
            c: Vec::with_capacity(s),
            u: Vec::with_capacity(s),
            h: Vec::with_capacity(s),
        })
        .collect();
    let mut masks: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(s); n_layers.saturating_sub(1)];
    let mut hidden: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| vec![0.0; l.hidden_size])
        .collect();
    let mut preds = Vec::with_capacity(s);

    for t in 0..s {
        let mut x = vec![series[t]];
        for (li, layer) in model.layers.iter().enumerate() {
            let parts = cell_step_parts(&x, &hidden[li], layer);
            caches[li].inputs.push(x.clone());
            caches[li].h_prev.push(hidden[li].clone());
            caches[li].z.push(parts.z);
            caches[li].r.push(parts.r);
            caches[li].c.push(parts.c);
            caches[li].u.push(parts.u);
            caches[li].h.push(parts.h.clone());
            hidden[li] = parts.h.clone();
            x = parts.h;
            if li + 1 < n_layers {
                if train && dropout_p > 0.0 {
                    let mask: Vec<f64> = x
                        .iter()
                        .map(|_| {
                            if rng.gen::<f64>() < dropout_p {
                                0.0
                            } else {
                                1.0 / keep
                            }
                        })
                        .collect();
                    for (v, m) in x.iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    masks[li].push(mask);
                } else if train {
                    masks[li].push(vec![1.0; x.len()]);
                }
            }
        }
        let mut y = model.dense_b;
        for (w, h) in model.dense_w.iter().zip(&x) {
            y += w * h;
        }
        preds.push(y);
    }

    let cache = if train {
        Some(ForwardCache {
            layers: caches,
            masks,
            preds: preds.clone(),
        })
    } else {
        None
    };
    Ok((preds, cache))
}

/// Stateful evaluator used for warmup plus closed-loop prediction.
pub struct RunState {
    hidden: Vec<Vec<f64>>,
}

impl RunState {
    pub fn new(model: &ModelParams) -> Self {
        Self {
            hidden: model
                .layers
                .iter()
                .map(|l| vec![0.0; l.hidden_size])
                .collect(),
        }
    }

    pub fn step(&mut self, model: &ModelParams, x_scalar: f64) -> f64 {
        let mut x = vec![x_scalar];
        for (li, layer) in model.layers.iter().enumerate() {
            let parts = cell_step_parts(&x, &self.hidden[li], layer);
            self.hidden[li] = parts.h.clone();
            x = parts.h;
        }
        let mut y = model.dense_b;
        for (w, h) in model.dense_w.iter().zip(&x) {
            y += w * h;
        }
        y
    }
}

/// Warm up on the window, then predict `horizon` slots closed-loop: the
/// last warmup output is the prediction for the first future slot, and
/// each prediction is fed back as the next input.
pub fn predict_future(series: &[f64], model: &ModelParams, horizon: usize) -> Result<Vec<f64>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if series.is_empty() {
        return Err(Error::Shape("empty warmup series".into()));
    }
    let mut state = RunState::new(model);
    let mut y = 0.0;
    for &x in series {
        y = state.step(model, x);
    }
    let mut preds = Vec::with_capacity(horizon);
    preds.push(y);
    for _ in 1..horizon {
        y = state.step(model, y);
        preds.push(y);
    }
    Ok(preds)
}

/// Teacher-forced HMSE of a model on a normalized series.
pub fn eval_loss(model: &ModelParams, series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Shape("series too short for evaluation".into()));
    }
    let (preds, _) = forward_sequence(series, model, 0.0, Mode::Eval, 0)?;
    hmse_loss(&preds[..series.len() - 1], &series[1..])
}
