//! Python bindings: the model, normalization, aggregation, attack,
//! detection, metrics, and the full experiment runner.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use fedgru_core::attack as core_attack;
use fedgru_core::config as core_config;
use fedgru_core::detector as core_detector;
use fedgru_core::experiment as core_experiment;
use fedgru_core::federation as core_federation;
use fedgru_core::grunet::{self, ModelParams, NetConfig, TrainConfig};
use fedgru_core::metrics as core_metrics;
use fedgru_core::traces as core_traces;

fn err(e: fedgru_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Multi-layer GRU with a scalar output head.
#[pyclass]
struct GruModel {
    model: ModelParams,
}

#[pymethods]
impl GruModel {
    #[new]
    #[pyo3(signature = (hidden_sizes, seed, use_bias=false))]
    fn new(hidden_sizes: Vec<usize>, seed: u64, use_bias: bool) -> PyResult<Self> {
        let net = NetConfig {
            input_size: 1,
            hidden_sizes,
            use_bias,
        };
        if net.hidden_sizes.is_empty() {
            return Err(PyValueError::new_err("hidden_sizes must be non-empty"));
        }
        Ok(Self {
            model: ModelParams::init(&net, seed),
        })
    }

    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    /// Train on one normalized series; targets are the series shifted one
    /// slot. Returns the per-epoch loss trace.
    #[pyo3(signature = (series, epochs=200, lr=0.01, dropout=0.2, seed=0))]
    fn train(
        &mut self,
        series: Vec<f64>,
        epochs: usize,
        lr: f64,
        dropout: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig {
            batch_len: series.len(),
            epochs,
            lr,
            dropout_p: dropout,
            net: self.model.net.clone(),
            ..TrainConfig::default()
        };
        cfg.validate().map_err(err)?;
        grunet::train_epochs(&series, &mut self.model, &cfg, seed).map_err(err)
    }

    /// Closed-loop prediction: warm up on `series`, then feed each
    /// prediction back for `horizon` steps.
    fn predict(&self, series: Vec<f64>, horizon: usize) -> PyResult<Vec<f64>> {
        grunet::predict_future(&series, &self.model, horizon).map_err(err)
    }

    /// Teacher-forced one-step loss on a series.
    fn eval_loss(&self, series: Vec<f64>) -> PyResult<f64> {
        grunet::eval_loss(&self.model, &series).map_err(err)
    }

    fn get_params(&self) -> Vec<f64> {
        self.model.flatten()
    }

    fn set_params(&mut self, flat: Vec<f64>) -> PyResult<()> {
        self.model = ModelParams::unflatten(&self.model.net, &flat).map_err(err)?;
        Ok(())
    }
}

#[pyfunction]
fn hmse_loss(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    grunet::hmse_loss(&pred, &target).map_err(err)
}

/// Population z-score parameters `(mean, std)` of a series.
#[pyfunction]
fn zscore_fit(values: Vec<f64>) -> PyResult<(f64, f64)> {
    let s = core_traces::zscore_fit(&values).map_err(err)?;
    Ok((s.mean, s.std))
}

#[pyfunction]
fn zscore_apply(values: Vec<f64>, mean: f64, std: f64) -> Vec<f64> {
    let s = core_traces::NormStats { mean, std };
    values
        .into_iter()
        .map(|v| core_traces::zscore_apply(v, &s))
        .collect()
}

#[pyfunction]
fn zscore_invert(values: Vec<f64>, mean: f64, std: f64) -> PyResult<Vec<f64>> {
    let s = core_traces::NormStats { mean, std };
    values
        .into_iter()
        .map(|v| core_traces::zscore_invert(v, &s).map_err(err))
        .collect()
}

/// Weighted average of parameter vectors, divided by the participant
/// count.
#[pyfunction]
#[pyo3(signature = (param_sets, weights=None))]
fn fed_average(param_sets: Vec<Vec<f64>>, weights: Option<Vec<f64>>) -> PyResult<Vec<f64>> {
    let w = weights.unwrap_or_else(|| vec![1.0; param_sets.len()]);
    core_federation::fed_average(&param_sets, &w).map_err(err)
}

/// Deterministically pick `round(fraction * n)` compromised vehicles.
#[pyfunction]
fn select_compromised(vehicles: Vec<String>, fraction: f64, seed: u64) -> PyResult<Vec<String>> {
    let set: BTreeSet<String> = vehicles.into_iter().collect();
    let cfg = core_attack::AttackConfig {
        fraction,
        ..core_attack::AttackConfig::default()
    };
    let a = core_attack::select_compromised(&set, &cfg, seed).map_err(err)?;
    Ok(a.compromised.into_iter().collect())
}

/// Verdict for one vehicle: slot-aligned predicted and received delays in
/// raw ms. Returns `(flagged, mean_abs_diff_ms)`.
#[pyfunction]
#[pyo3(signature = (predicted_ms, received_ms, threshold_ms=10.0))]
fn detect(
    predicted_ms: Vec<f64>,
    received_ms: Vec<f64>,
    threshold_ms: f64,
) -> PyResult<(bool, f64)> {
    if predicted_ms.len() != received_ms.len() || predicted_ms.is_empty() {
        return Err(PyValueError::new_err(
            "predicted and received series must be non-empty and equal length",
        ));
    }
    let preds: BTreeMap<u64, f64> = predicted_ms
        .iter()
        .enumerate()
        .map(|(i, &p)| (i as u64, p))
        .collect();
    let reports: Vec<core_traces::DelayReport> = received_ms
        .iter()
        .enumerate()
        .map(|(i, &d)| core_traces::DelayReport {
            vehicle_id: "v".to_string(),
            slot: i as u64,
            node_id: 1,
            delay_ms: d,
            poisoned: false,
        })
        .collect();
    let cfg = core_detector::DetectionConfig {
        threshold_ms,
        ..core_detector::DetectionConfig::default()
    };
    let v = core_detector::detect_vehicle(&preds, &reports, &cfg, 0)
        .map_err(err)?
        .expect("non-empty overlap");
    Ok((v.flagged, v.mean_abs_diff_ms))
}

/// `(accuracy, detection_rate, fpr, fnr)` from confusion counts; undefined
/// entries come back as None.
#[pyfunction]
fn rates(
    tp: u64,
    tn: u64,
    fp: u64,
    fn_: u64,
) -> (Option<f64>, Option<f64>, Option<f64>, Option<f64>) {
    let c = core_metrics::ConfusionCounts { tp, tn, fp, fn_ };
    (
        core_metrics::accuracy(&c).ok(),
        core_metrics::detection_rate(&c).ok(),
        core_metrics::false_positive_rate(&c).ok(),
        core_metrics::false_negative_rate(&c).ok(),
    )
}

/// Run a full experiment from a TOML config file; results land in the
/// config's output directory. Returns per-fraction merged
/// `(label, tp, tn, fp, fn)` tuples.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None))]
fn run_experiment(
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<Vec<(String, u64, u64, u64, u64)>> {
    let mut cfg = core_config::load_config(&config_path).map_err(err)?;
    if let Some(out) = out_dir {
        cfg.out_dir = out;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let outcome = core_experiment::run_experiment(&cfg).map_err(err)?;
    Ok(outcome
        .runs
        .iter()
        .map(|run| {
            let mut merged = core_metrics::ConfusionCounts::default();
            for log in &run.history {
                if let Some(c) = &log.confusion {
                    merged.merge(c);
                }
            }
            (run.label.clone(), merged.tp, merged.tn, merged.fp, merged.fn_)
        })
        .collect())
}

#[pymodule]
fn fedgru(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GruModel>()?;
    m.add_function(wrap_pyfunction!(hmse_loss, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_fit, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_apply, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_invert, m)?)?;
    m.add_function(wrap_pyfunction!(fed_average, m)?)?;
    m.add_function(wrap_pyfunction!(select_compromised, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(rates, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
