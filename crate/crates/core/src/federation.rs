//! Continual federated rounds: distribute the global model, train locals
//! on their sliding windows, aggregate by federated averaging, predict
//! the next slots, and emit per-vehicle verdicts.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detector::{detect_vehicle, DetectionConfig, Verdict};
use crate::grunet::{
    eval_loss, predict_future, train_epochs, ModelParams, TrainConfig,
};
use crate::metrics::{mean_delay_difference, training_loss_aggregate, ConfusionCounts};
use crate::seed;
use crate::traces::{
    make_node_series, zscore_apply, zscore_fit, DelayReport, NodeId, NormStats, VehicleId,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    /// Number of local nodes (K).
    pub num_local: usize,
    /// Continual rounds to run (R).
    pub rounds: usize,
    /// Cluster size including the global node (E = K + 1).
    pub cluster_size: usize,
    /// Per-local aggregation weights; empty means all 1.
    pub weights: Vec<f64>,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_local: 5,
            rounds: 10,
            cluster_size: 6,
            weights: Vec::new(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_size != self.num_local + 1 {
            return Err(Error::Config(format!(
                "cluster_size must equal num_local + 1 (got {} and {})",
                self.cluster_size, self.num_local
            )));
        }
        if self.cluster_size < 2 {
            return Err(Error::Config("cluster_size must be >= 2".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !self.weights.is_empty() {
            if self.weights.len() != self.num_local {
                return Err(Error::Config(
                    "weights must be empty or one per local node".into(),
                ));
            }
            if self.weights.iter().any(|w| *w <= 0.0) {
                return Err(Error::Config("weights must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn effective_weights(&self) -> Vec<f64> {
        if self.weights.is_empty() {
            vec![1.0; self.num_local]
        } else {
            self.weights.clone()
        }
    }

    pub fn local_node_ids(&self) -> Vec<NodeId> {
        (1..=self.num_local as NodeId).collect()
    }
}

/// Sliding training window over slot indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u64,
    pub len: usize,
}

impl Window {
    /// Advance by exactly one slot; length unchanged.
    pub fn slide(self) -> Self {
        Self {
            start: self.start + 1,
            len: self.len,
        }
    }
}

/// Weighted element-wise average of local parameter vectors, divided by
/// the participating count. With unit weights this is the plain mean.
pub fn fed_average(locals: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
    if locals.is_empty() {
        return Err(Error::Config("fed_average over zero participants".into()));
    }
    if weights.len() != locals.len() {
        return Err(Error::Shape(format!(
            "fed_average: {} weight(s) for {} participant(s)",
            weights.len(),
            locals.len()
        )));
    }
    let n = locals[0].len();
    for l in locals {
        if l.len() != n {
            return Err(Error::Shape(format!(
                "fed_average layout mismatch: {} vs {}",
                l.len(),
                n
            )));
        }
    }
    let k = locals.len() as f64;
    let mut g = vec![0.0; n];
    for (local, &w) in locals.iter().zip(weights) {
        for (gi, li) in g.iter_mut().zip(local) {
            *gi += w * li;
        }
    }
    for gi in g.iter_mut() {
        *gi /= k;
    }
    Ok(g)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalNodeState {
    pub node_id: NodeId,
    pub window: Window,
    pub params: ModelParams,
    pub norm: NormStats,
    pub loss_trace: Vec<f64>,
}

/// Per-round record; everything downstream scoring and plotting needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub window_start: u64,
    /// Mean epoch loss per participating local node.
    pub node_train_loss: BTreeMap<NodeId, f64>,
    /// Final-epoch loss per participating local node.
    pub node_final_loss: BTreeMap<NodeId, f64>,
    /// Sum and mean of the per-node training losses.
    pub train_loss_sum: f64,
    pub train_loss_mean: f64,
    /// Global model teacher-forced loss over each node's window, averaged.
    pub global_eval_loss: f64,
    /// Closed-loop held-out loss of the global model over all node
    /// horizons, and the same quantity for each local model.
    pub heldout_global: f64,
    pub heldout_locals: BTreeMap<NodeId, f64>,
    /// Denormalized per-node predictions for the horizon slots.
    pub predictions_ms: BTreeMap<NodeId, Vec<f64>>,
    /// Mean |predicted - received| per node over the horizon, in ms.
    pub mdd_ms: BTreeMap<NodeId, f64>,
    pub verdicts: Vec<Verdict>,
    /// Filled in by scoring; detection itself never reads ground truth.
    pub confusion: Option<ConfusionCounts>,
    pub skipped_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct GlobalState {
    pub params: ModelParams,
    pub round: usize,
    pub window: Window,
}

/// One federation experiment over a fixed report stream.
pub struct Federation<'a> {
    pub fed_cfg: &'a FederationConfig,
    pub train_cfg: &'a TrainConfig,
    pub det_cfg: &'a DetectionConfig,
    pub reports: &'a [DelayReport],
    pub master_seed: u64,
    /// Fallback representative for empty leading slots.
    pub default_delay_ms: f64,
}

struct LocalOutcome {
    node_id: NodeId,
    params_flat: Vec<f64>,
    weight: f64,
    norm: NormStats,
    series_norm: Vec<f64>,
    mean_epoch_loss: f64,
    final_loss: f64,
}

impl<'a> Federation<'a> {
    pub fn new(
        fed_cfg: &'a FederationConfig,
        train_cfg: &'a TrainConfig,
        det_cfg: &'a DetectionConfig,
        reports: &'a [DelayReport],
        master_seed: u64,
    ) -> Result<Self> {
        fed_cfg.validate()?;
        train_cfg.validate()?;
        det_cfg.validate()?;
        Ok(Self {
            fed_cfg,
            train_cfg,
            det_cfg,
            reports,
            master_seed,
            default_delay_ms: 20.0,
        })
    }

    pub fn init_global(&self) -> GlobalState {
        GlobalState {
            params: ModelParams::init(
                &self.train_cfg.net,
                seed::derive(self.master_seed, &[seed::tag("global-init")]),
            ),
            round: 0,
            window: Window {
                start: 0,
                len: self.train_cfg.batch_len,
            },
        }
    }

    fn node_has_reports(&self, node_id: NodeId, window: Window) -> bool {
        self.reports.iter().any(|r| {
            r.node_id == node_id && r.slot >= window.start && r.slot < window.start + window.len as u64
        })
    }

    /// Train one local node from the global parameters over its window.
    pub fn local_update(
        &self,
        node_id: NodeId,
        window: Window,
        global: &ModelParams,
        round: usize,
    ) -> Result<LocalNodeState> {
        let series = make_node_series(
            self.reports,
            node_id,
            window.start,
            window.len,
            self.default_delay_ms,
        );
        let norm = zscore_fit(&series.values)?;
        let series_norm: Vec<f64> = series.values.iter().map(|v| zscore_apply(*v, &norm)).collect();
        let mut params = global.clone();
        let train_seed = seed::derive(
            self.master_seed,
            &[seed::tag("local"), node_id as u64, round as u64],
        );
        let loss_trace = train_epochs(&series_norm, &mut params, self.train_cfg, train_seed)?;
        Ok(LocalNodeState {
            node_id,
            window,
            params,
            norm,
            loss_trace,
        })
    }

    fn heldout_loss(
        model: &ModelParams,
        locals: &[LocalOutcome],
        horizons_norm: &BTreeMap<NodeId, Vec<f64>>,
        horizon: usize,
    ) -> Result<f64> {
        let mut losses = Vec::new();
        for lo in locals {
            let Some(actual) = horizons_norm.get(&lo.node_id) else {
                continue;
            };
            let preds = predict_future(&lo.series_norm, model, horizon)?;
            let sq: f64 = preds
                .iter()
                .zip(actual)
                .map(|(p, a)| (p - a) * (p - a))
                .sum();
            losses.push(sq / (2.0 * horizon as f64));
        }
        if losses.is_empty() {
            return Ok(f64::NAN);
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// One full round: local updates, aggregation, prediction, detection.
    /// On any node failure the error propagates and `global` is left
    /// untouched.
    pub fn run_round(&self, global: &mut GlobalState, round: usize) -> Result<RoundLog> {
        let window = global.window;
        let horizon = self.train_cfg.horizon;
        let weights = self.fed_cfg.effective_weights();

        let mut locals: Vec<LocalOutcome> = Vec::new();
        let mut skipped_nodes = Vec::new();
        for (idx, node_id) in self.fed_cfg.local_node_ids().into_iter().enumerate() {
            if !self.node_has_reports(node_id, window) {
                log::warn!(
                    "round {}: node {} has no reports in window [{}, {}); skipping",
                    round,
                    node_id,
                    window.start,
                    window.start + window.len as u64
                );
                skipped_nodes.push(node_id);
                continue;
            }
            let state = self.local_update(node_id, window, &global.params, round)?;
            let (_, mean) = training_loss_aggregate(&state.loss_trace);
            let final_loss = state.loss_trace.last().copied().unwrap_or(0.0);
            let series = make_node_series(
                self.reports,
                node_id,
                window.start,
                window.len,
                self.default_delay_ms,
            );
            let series_norm = series
                .values
                .iter()
                .map(|v| zscore_apply(*v, &state.norm))
                .collect();
            locals.push(LocalOutcome {
                node_id,
                params_flat: state.params.flatten(),
                weight: weights[idx],
                norm: state.norm,
                series_norm,
                mean_epoch_loss: mean,
                final_loss,
            });
        }
        if locals.is_empty() {
            return Err(Error::RoundAborted {
                round,
                reason: "all local nodes were skipped".into(),
            });
        }

        let flats: Vec<Vec<f64>> = locals.iter().map(|l| l.params_flat.clone()).collect();
        let part_weights: Vec<f64> = locals.iter().map(|l| l.weight).collect();
        let averaged = fed_average(&flats, &part_weights)?;
        if averaged.iter().any(|v| !v.is_finite()) {
            return Err(Error::RoundAborted {
                round,
                reason: "aggregated parameters are not finite".into(),
            });
        }
        let new_global = ModelParams::unflatten(&self.train_cfg.net, &averaged)?;

        // Horizon ground series per node (denormalized and normalized).
        let horizon_start = window.start + window.len as u64;
        let mut horizons_ms: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        let mut horizons_norm: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
        for lo in &locals {
            let s = make_node_series(
                self.reports,
                lo.node_id,
                horizon_start,
                horizon,
                self.default_delay_ms,
            );
            horizons_norm.insert(
                lo.node_id,
                s.values.iter().map(|v| zscore_apply(*v, &lo.norm)).collect(),
            );
            horizons_ms.insert(lo.node_id, s.values);
        }

        // Predictions with the fresh global model, denormalized per node.
        let mut predictions_ms = BTreeMap::new();
        let mut mdd_ms = BTreeMap::new();
        let mut verdicts: Vec<Verdict> = Vec::new();
        for lo in &locals {
            let preds_norm = predict_future(&lo.series_norm, &new_global, horizon)?;
            let preds: Vec<f64> = preds_norm
                .iter()
                .map(|p| {
                    if lo.norm.is_degenerate() {
                        lo.norm.mean
                    } else {
                        p * lo.norm.std + lo.norm.mean
                    }
                })
                .collect();
            mdd_ms.insert(
                lo.node_id,
                mean_delay_difference(&preds, &horizons_ms[&lo.node_id])?,
            );

            let pred_by_slot: BTreeMap<u64, f64> = preds
                .iter()
                .enumerate()
                .map(|(i, p)| (horizon_start + i as u64, *p))
                .collect();
            let mut by_vehicle: BTreeMap<VehicleId, Vec<DelayReport>> = BTreeMap::new();
            for r in self.reports {
                if r.node_id == lo.node_id
                    && r.slot >= horizon_start
                    && r.slot < horizon_start + horizon as u64
                {
                    by_vehicle.entry(r.vehicle_id.clone()).or_default().push(r.clone());
                }
            }
            for (_, reps) in by_vehicle {
                if let Some(v) = detect_vehicle(&pred_by_slot, &reps, self.det_cfg, round)? {
                    verdicts.push(v);
                }
            }
            predictions_ms.insert(lo.node_id, preds);
        }
        verdicts.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));

        let node_train_loss: BTreeMap<NodeId, f64> =
            locals.iter().map(|l| (l.node_id, l.mean_epoch_loss)).collect();
        let node_final_loss: BTreeMap<NodeId, f64> =
            locals.iter().map(|l| (l.node_id, l.final_loss)).collect();
        let losses: Vec<f64> = node_train_loss.values().copied().collect();
        let (train_loss_sum, train_loss_mean) = training_loss_aggregate(&losses);

        let mut global_eval = Vec::new();
        for lo in &locals {
            global_eval.push(eval_loss(&new_global, &lo.series_norm)?);
        }
        let global_eval_loss = global_eval.iter().sum::<f64>() / global_eval.len() as f64;

        let heldout_global = Self::heldout_loss(&new_global, &locals, &horizons_norm, horizon)?;
        let mut heldout_locals = BTreeMap::new();
        for lo in &locals {
            let model = ModelParams::unflatten(&self.train_cfg.net, &lo.params_flat)?;
            heldout_locals.insert(
                lo.node_id,
                Self::heldout_loss(&model, &locals, &horizons_norm, horizon)?,
            );
        }

        // Commit only after every step succeeded.
        global.params = new_global;
        global.round = round;
        global.window = global.window.slide();

        Ok(RoundLog {
            round,
            window_start: window.start,
            node_train_loss,
            node_final_loss,
            train_loss_sum,
            train_loss_mean,
            global_eval_loss,
            heldout_global,
            heldout_locals,
            predictions_ms,
            mdd_ms,
            verdicts,
            confusion: None,
            skipped_nodes,
        })
    }

    /// Run all configured rounds; parameters persist across rounds.
    pub fn run_continual(&self) -> Result<(GlobalState, Vec<RoundLog>)> {
        let s = self.train_cfg.batch_len;
        let r = self.fed_cfg.rounds;
        let t = self.train_cfg.horizon;
        let required = (s + r + t) as u64;
        let max_slot = self.reports.iter().map(|x| x.slot).max().unwrap_or(0);
        if max_slot + 1 < required {
            return Err(Error::Config(format!(
                "insufficient data: {} slots required (batch {} + rounds {} + horizon {}), got {}",
                required,
                s,
                r,
                t,
                max_slot + 1
            )));
        }
        let mut global = self.init_global();
        let mut history = Vec::with_capacity(r);
        for round in 1..=r {
            let log = self.run_round(&mut global, round)?;
            history.push(log);
        }
        Ok((global, history))
    }
}

/// Fill each round's confusion counts from the ground-truth compromised
/// set. This is the only place ground truth is consulted.
pub fn score_history(
    history: &mut [RoundLog],
    compromised: &BTreeSet<VehicleId>,
    known: &BTreeSet<VehicleId>,
) -> Result<()> {
    for log in history.iter_mut() {
        log.confusion = Some(crate::metrics::update_confusion(
            &log.verdicts,
            compromised,
            known,
        )?);
    }
    Ok(())
}
