//! Sybil data-poisoning adversary: a fraction of vehicle identities is
//! compromised and their reported delays are replaced with plausible
//! smaller values from the valid range.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::traces::{DelayReport, VehicleId};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Share of vehicles compromised, in [0, 1].
    pub fraction: f64,
    /// Lower bound of the plausible delay range.
    pub valid_min_ms: f64,
    /// Minimum reduction below the true delay.
    pub margin_ms: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            valid_min_ms: 1.0,
            margin_ms: 25.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config("fraction must lie in [0,1]".into()));
        }
        if self.valid_min_ms < 0.0 || self.margin_ms < 0.0 {
            return Err(Error::Config(
                "valid_min_ms and margin_ms must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SybilAssignment {
    pub compromised: BTreeSet<VehicleId>,
}

/// Pick round(fraction * n) vehicles uniformly at random, deterministic
/// under the seed.
pub fn select_compromised(
    vehicles: &BTreeSet<VehicleId>,
    config: &AttackConfig,
    attack_seed: u64,
) -> Result<SybilAssignment> {
    config.validate()?;
    let n = vehicles.len();
    let count = (config.fraction * n as f64).round() as usize;
    let mut ids: Vec<&VehicleId> = vehicles.iter().collect();
    let mut rng = seed::rng_for(attack_seed, &[seed::tag("select")]);
    ids.shuffle(&mut rng);
    Ok(SybilAssignment {
        compromised: ids.into_iter().take(count).cloned().collect(),
    })
}

/// Replace every compromised vehicle's delay with a uniform draw from
/// [valid_min, max(valid_min, true - margin)] and set the ground-truth
/// flag. Other reports pass through untouched.
pub fn poison_reports(
    reports: &[DelayReport],
    assignment: &SybilAssignment,
    config: &AttackConfig,
    attack_seed: u64,
) -> Result<Vec<DelayReport>> {
    config.validate()?;
    let mut rng = seed::rng_for(attack_seed, &[seed::tag("poison")]);
    let mut any_unpinned = false;
    let out: Vec<DelayReport> = reports
        .iter()
        .map(|r| {
            if !assignment.compromised.contains(&r.vehicle_id) {
                return r.clone();
            }
            let hi = (r.delay_ms - config.margin_ms).max(config.valid_min_ms);
            let delay_ms = if hi > config.valid_min_ms {
                any_unpinned = true;
                rng.gen_range(config.valid_min_ms..hi)
            } else {
                hi
            };
            DelayReport {
                delay_ms,
                poisoned: true,
                ..r.clone()
            }
        })
        .collect();
    if !assignment.compromised.is_empty()
        && !any_unpinned
        && reports.iter().any(|r| assignment.compromised.contains(&r.vehicle_id))
    {
        log::warn!(
            "valid_min_ms {} leaves no room below any true delay; poisoned values pinned",
            config.valid_min_ms
        );
    }
    Ok(out)
}
