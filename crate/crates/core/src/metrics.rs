//! Scoring: confusion counts over vehicle-round verdicts and the derived
//! rate metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::detector::Verdict;
use crate::traces::VehicleId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// Tally verdicts against the ground-truth compromised set; one count per
/// vehicle-round verdict. `known` guards against verdicts for vehicles
/// outside the experiment.
pub fn update_confusion(
    verdicts: &[Verdict],
    compromised: &BTreeSet<VehicleId>,
    known: &BTreeSet<VehicleId>,
) -> Result<ConfusionCounts> {
    let mut c = ConfusionCounts::default();
    for v in verdicts {
        if !known.contains(&v.vehicle_id) {
            return Err(Error::Scoring(format!(
                "verdict for unknown vehicle {}",
                v.vehicle_id
            )));
        }
        let attacked = compromised.contains(&v.vehicle_id);
        match (v.flagged, attacked) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::UndefinedMetric("accuracy with zero total".into()));
    }
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

pub fn detection_rate(c: &ConfusionCounts) -> Result<f64> {
    if c.tp + c.fn_ == 0 {
        return Err(Error::UndefinedMetric(
            "detection rate with no attack samples".into(),
        ));
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

pub fn false_positive_rate(c: &ConfusionCounts) -> Result<f64> {
    if c.fp + c.tn == 0 {
        return Err(Error::UndefinedMetric(
            "false positive rate with no legit samples".into(),
        ));
    }
    Ok(c.fp as f64 / (c.fp + c.tn) as f64)
}

/// Miss rate. Computed as 1 - DR so the complementarity DR + FNR = 1
/// holds exactly in floating point.
pub fn false_negative_rate(c: &ConfusionCounts) -> Result<f64> {
    Ok(1.0 - detection_rate(c)?)
}

/// Mean absolute difference (ms) between predicted and received delays.
pub fn mean_delay_difference(d_pred: &[f64], d_rcv: &[f64]) -> Result<f64> {
    if d_pred.len() != d_rcv.len() {
        return Err(Error::Shape(format!(
            "MDD length mismatch: {} vs {}",
            d_pred.len(),
            d_rcv.len()
        )));
    }
    if d_pred.is_empty() {
        return Err(Error::Shape("MDD of empty sequences".into()));
    }
    Ok(d_pred
        .iter()
        .zip(d_rcv)
        .map(|(p, r)| (p - r).abs())
        .sum::<f64>()
        / d_pred.len() as f64)
}

/// Aggregate training loss over contributing series: the sum, plus the
/// mean for plotting.
pub fn training_loss_aggregate(losses: &[f64]) -> (f64, f64) {
    let sum: f64 = losses.iter().sum();
    let mean = if losses.is_empty() {
        0.0
    } else {
        sum / losses.len() as f64
    };
    (sum, mean)
}
