//! Backpropagation through time over the cached forward activations.

use super::forward::{ForwardCache, LayerCache};
use super::math::Mat;
use super::params::{GruLayerParams, ModelParams};
use crate::{Error, Result};

fn matvec_t(m: &Mat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; m.cols];
    m.matvec_t_add(x, &mut y);
    y
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// BPTT through one layer. `dout[t]` is dL/dh_t from above (pre-dropout);
/// returns dL/dx_t per step and accumulates parameter gradients.
fn bptt_layer(
    layer: &GruLayerParams,
    lc: &LayerCache,
    dout: &[Vec<f64>],
    grads: &mut GruLayerParams,
) -> Vec<Vec<f64>> {
    let steps = dout.len();
    let h = layer.hidden_size;
    let mut dh_next = vec![0.0; h];
    let mut dx_all: Vec<Vec<f64>> = Vec::with_capacity(steps);
    dx_all.resize_with(steps, || vec![0.0; layer.input_size]);

    for t in (0..steps).rev() {
        let z = &lc.z[t];
        let r = &lc.r[t];
        let c = &lc.c[t];
        let u = &lc.u[t];
        let h_prev = &lc.h_prev[t];
        let x = &lc.inputs[t];

        let mut dh = dout[t].clone();
        add_assign(&mut dh, &dh_next);

        // h = z ⊙ h_prev + (1−z) ⊙ c
        let mut dh_prev: Vec<f64> = (0..h).map(|i| dh[i] * z[i]).collect();
        let dz: Vec<f64> = (0..h).map(|i| dh[i] * (h_prev[i] - c[i])).collect();
        let dc: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - z[i])).collect();

        // c = tanh(Wc x + r ⊙ u), u = Uc h_prev
        let da_c: Vec<f64> = (0..h).map(|i| dc[i] * (1.0 - c[i] * c[i])).collect();
        let dr: Vec<f64> = (0..h).map(|i| da_c[i] * u[i]).collect();
        let du: Vec<f64> = (0..h).map(|i| da_c[i] * r[i]).collect();

        let da_z: Vec<f64> = (0..h).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
        let da_r: Vec<f64> = (0..h).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();

        grads.wc.outer_add(&da_c, x);
        grads.uc.outer_add(&du, h_prev);
        grads.wz.outer_add(&da_z, x);
        grads.uz.outer_add(&da_z, h_prev);
        grads.wr.outer_add(&da_r, x);
        grads.ur.outer_add(&da_r, h_prev);
        if let Some(b) = grads.bc.as_mut() {
            add_assign(b, &da_c);
        }
        if let Some(b) = grads.bz.as_mut() {
            add_assign(b, &da_z);
        }
        if let Some(b) = grads.br.as_mut() {
            add_assign(b, &da_r);
        }

        add_assign(&mut dh_prev, &matvec_t(&layer.uc, &du));
        add_assign(&mut dh_prev, &matvec_t(&layer.uz, &da_z));
        add_assign(&mut dh_prev, &matvec_t(&layer.ur, &da_r));

        let mut dx = matvec_t(&layer.wz, &da_z);
        add_assign(&mut dx, &matvec_t(&layer.wr, &da_r));
        add_assign(&mut dx, &matvec_t(&layer.wc, &da_c));
        dx_all[t] = dx;

        dh_next = dh_prev;
    }
    dx_all
}

/// Gradient of the loss w.r.t. every parameter, in flat layout.
/// `d_preds[t]` is dL/dŷ_t from the loss definition.
pub fn backward(model: &ModelParams, cache: &ForwardCache, d_preds: &[f64]) -> Result<Vec<f64>> {
    let steps = d_preds.len();
    if steps != cache.preds.len() {
        return Err(Error::Shape(format!(
            "d_preds length {} does not match cached sequence length {}",
            steps,
            cache.preds.len()
        )));
    }
    let n_layers = model.layers.len();
    let mut grads = ModelParams::zeros(&model.net);

    // Dense head; its input is the top layer's (unmasked) output.
    let top = &cache.layers[n_layers - 1];
    let mut dout: Vec<Vec<f64>> = Vec::with_capacity(steps);
    for t in 0..steps {
        let dy = d_preds[t];
        grads.dense_b += dy;
        for (gw, hv) in grads.dense_w.iter_mut().zip(&top.h[t]) {
            *gw += dy * hv;
        }
        dout.push(model.dense_w.iter().map(|w| w * dy).collect());
    }

    for li in (0..n_layers).rev() {
        let dx = bptt_layer(
            &model.layers[li],
            &cache.layers[li],
            &dout,
            &mut grads.layers[li],
        );
        if li > 0 {
            // Undo the inter-layer dropout boundary.
            dout = dx
                .into_iter()
                .enumerate()
                .map(|(t, mut d)| {
                    if !cache.masks[li - 1].is_empty() {
                        for (dv, m) in d.iter_mut().zip(&cache.masks[li - 1][t]) {
                            *dv *= m;
                        }
                    }
                    d
                })
                .collect();
        }
    }

    Ok(grads.flatten())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::forward::{forward_sequence, Mode};
    use super::super::params::NetConfig;
    use super::super::hmse_loss;
    use approx::assert_relative_eq;

    fn toy_model(bias: bool, init_seed: u64) -> ModelParams {
        let net = NetConfig {
            input_size: 1,
            hidden_sizes: vec![3, 4, 5],
            use_bias: bias,
        };
        ModelParams::init(&net, init_seed)
    }

    fn loss_d_preds(preds: &[f64], target: &[f64]) -> Vec<f64> {
        let s = target.len() as f64;
        let mut d: Vec<f64> = preds
            .iter()
            .take(target.len())
            .zip(target)
            .map(|(p, t)| (p - t) / s)
            .collect();
        d.resize(preds.len(), 0.0);
        d
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let model = toy_model(false, 4);
        let series = vec![0.2, -0.1, 0.5, 0.3];
        let (preds, cache) = forward_sequence(&series, &model, 0.0, Mode::Train, 0).unwrap();
        let d = vec![0.0; preds.len()];
        let grad = backward(&model, &cache.unwrap(), &d).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn dense_bias_gradient_is_scaled_residual_sum() {
        let model = toy_model(false, 5);
        let series = vec![0.4, -0.3, 0.7, 0.1, 0.9];
        let (preds, cache) = forward_sequence(&series, &model, 0.0, Mode::Train, 0).unwrap();
        let target = &series[1..];
        let d = loss_d_preds(&preds, target);
        let grad = backward(&model, &cache.unwrap(), &d).unwrap();
        let expected: f64 = preds[..target.len()]
            .iter()
            .zip(target)
            .map(|(p, t)| (p - t) / target.len() as f64)
            .sum();
        // dense bias is the last entry of the flat layout
        assert_relative_eq!(*grad.last().unwrap(), expected, epsilon = 1e-12);
    }

    /// Central finite differences over the full flat parameter vector;
    /// independent of the BPTT implementation path.
    fn fd_gradient(model: &ModelParams, series: &[f64], step: f64) -> Vec<f64> {
        let flat = model.flatten();
        let target = &series[1..];
        let mut grad = vec![0.0; flat.len()];
        for i in 0..flat.len() {
            let mut plus = flat.clone();
            plus[i] += step;
            let mp = ModelParams::unflatten(&model.net, &plus).unwrap();
            let (pp, _) = forward_sequence(series, &mp, 0.0, Mode::Eval, 0).unwrap();
            let lp = hmse_loss(&pp[..target.len()], target).unwrap();
            let mut minus = flat.clone();
            minus[i] -= step;
            let mm = ModelParams::unflatten(&model.net, &minus).unwrap();
            let (pm, _) = forward_sequence(series, &mm, 0.0, Mode::Eval, 0).unwrap();
            let lm = hmse_loss(&pm[..target.len()], target).unwrap();
            grad[i] = (lp - lm) / (2.0 * step);
        }
        grad
    }

    fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
            .fold(0.0, f64::max)
    }

    #[test]
    fn bptt_matches_finite_differences() {
        for (bias, init_seed) in [(false, 21), (true, 22)] {
            let model = toy_model(bias, init_seed);
            let series: Vec<f64> = (0..10).map(|i| ((i as f64) * 0.7).sin()).collect();
            let (preds, cache) = forward_sequence(&series, &model, 0.0, Mode::Train, 0).unwrap();
            let d = loss_d_preds(&preds, &series[1..]);
            let analytic = backward(&model, &cache.unwrap(), &d).unwrap();
            // step 1e-4: small enough for truncation, large enough that
            // rounding noise stays below tiny gradient components
            let numeric = fd_gradient(&model, &series, 1e-4);
            assert!(
                max_rel_error(&analytic, &numeric) < 1e-4,
                "gradient check failed: max rel err {}",
                max_rel_error(&analytic, &numeric)
            );
        }
    }
}
