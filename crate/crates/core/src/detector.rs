//! Anomaly verdicts: compare predicted node-level delays against the
//! delays each vehicle actually reported over the prediction horizon.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::traces::{DelayReport, VehicleId};
use crate::{Error, Result};

/// How the per-slot comparisons over the horizon collapse into one
/// verdict. Mean absolute difference is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    AnySlot,
    Majority,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    /// Delay threshold in ms; deviations strictly above it are anomalous.
    pub threshold_ms: f64,
    pub aggregation: Aggregation,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            threshold_ms: 10.0,
            aggregation: Aggregation::Mean,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_ms <= 0.0 {
            return Err(Error::Config("threshold_ms must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub vehicle_id: VehicleId,
    pub round: usize,
    pub flagged: bool,
    pub mean_abs_diff_ms: f64,
}

/// Per-slot anomaly indicator: 1 iff |d_pred - d_rcv| strictly exceeds
/// the threshold. Both delays in raw ms.
pub fn detect_slot(d_pred_ms: f64, d_rcv_ms: f64, threshold_ms: f64) -> u8 {
    if (d_pred_ms - d_rcv_ms).abs() > threshold_ms {
        1
    } else {
        0
    }
}

/// Verdict for one vehicle over the horizon. `predictions` maps slot ->
/// predicted node-level delay (denormalized ms); `reports` are the
/// vehicle's own reports. Vehicles with no overlapping slot yield no
/// verdict.
pub fn detect_vehicle(
    predictions: &BTreeMap<u64, f64>,
    reports: &[DelayReport],
    config: &DetectionConfig,
    round: usize,
) -> Result<Option<Verdict>> {
    config.validate()?;
    let mut diffs = Vec::new();
    let mut vehicle_id = None;
    for r in reports {
        if let Some(pred) = predictions.get(&r.slot) {
            diffs.push((pred - r.delay_ms).abs());
            vehicle_id.get_or_insert_with(|| r.vehicle_id.clone());
        }
    }
    let Some(vehicle_id) = vehicle_id else {
        return Ok(None);
    };
    let mean_abs_diff_ms = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let flagged = match config.aggregation {
        Aggregation::Mean => mean_abs_diff_ms > config.threshold_ms,
        Aggregation::AnySlot => diffs.iter().any(|d| *d > config.threshold_ms),
        Aggregation::Majority => {
            let hits = diffs.iter().filter(|d| **d > config.threshold_ms).count();
            2 * hits > diffs.len()
        }
    };
    Ok(Some(Verdict {
        vehicle_id,
        round,
        flagged,
        mean_abs_diff_ms,
    }))
}
