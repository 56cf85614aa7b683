//! Experiment configuration: a TOML file with sections per subsystem.
//! Every key has a default matching the reference setup, so an empty file
//! is a valid full experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::detector::DetectionConfig;
use crate::federation::FederationConfig;
use crate::grunet::TrainConfig;
use crate::traces::{NodePosition, SyntheticConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Trace,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// CSV path for `source = "trace"`.
    pub trace_path: Option<PathBuf>,
    pub slot_len_s: f64,
    /// Local node positions for trace mode: `[[node_id, lat, lon], ...]`.
    pub node_positions: Vec<(u32, f64, f64)>,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            trace_path: None,
            slot_len_s: 10.0,
            node_positions: Vec::new(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn node_position_structs(&self) -> Vec<NodePosition> {
        self.node_positions
            .iter()
            .map(|&(node_id, lat, lon)| NodePosition { node_id, lat, lon })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub fraction: f64,
    pub valid_min_ms: f64,
    pub margin_ms: f64,
    /// First slot the adversary poisons. Defaults to the batch length,
    /// i.e. the attack begins when detection begins.
    pub start_slot: Option<u64>,
    /// Attacked-fraction sweep; defaults to just `fraction`.
    pub sweep_fractions: Vec<f64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        let base = AttackConfig::default();
        Self {
            fraction: base.fraction,
            valid_min_ms: base.valid_min_ms,
            margin_ms: base.margin_ms,
            start_slot: None,
            sweep_fractions: Vec::new(),
        }
    }
}

impl AttackSection {
    pub fn attack_config(&self, fraction: f64) -> AttackConfig {
        AttackConfig {
            fraction,
            valid_min_ms: self.valid_min_ms,
            margin_ms: self.margin_ms,
        }
    }

    pub fn fractions(&self) -> Vec<f64> {
        if self.sweep_fractions.is_empty() {
            vec![self.fraction]
        } else {
            self.sweep_fractions.clone()
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub federation: FederationConfig,
    pub train: TrainConfig,
    pub attack: AttackSection,
    pub detection: DetectionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("results"),
            data: DataConfig::default(),
            federation: FederationConfig::default(),
            train: TrainConfig::default(),
            attack: AttackSection::default(),
            detection: DetectionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        self.train.validate()?;
        self.detection.validate()?;
        self.attack.attack_config(self.attack.fraction).validate()?;
        for f in self.attack.fractions() {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config("fraction must lie in [0,1]".into()));
            }
        }
        if self.data.source == DataSource::Trace {
            if self.data.trace_path.is_none() {
                return Err(Error::Config(
                    "trace data source requires data.trace_path".into(),
                ));
            }
            if self.data.slot_len_s <= 0.0 {
                return Err(Error::Config("data.slot_len_s must be positive".into()));
            }
            if self.data.node_positions.is_empty() {
                return Err(Error::Config(
                    "trace data source requires data.node_positions".into(),
                ));
            }
        }
        Ok(())
    }

    /// First poisoned slot: configured, or the batch length.
    pub fn attack_start_slot(&self) -> u64 {
        self.attack
            .start_slot
            .unwrap_or(self.train.batch_len as u64)
    }
}

/// Load and validate a config file. Unknown keys are rejected by name;
/// missing keys fall back to the defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {}", path.display(), e)))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Batch sizes exercised by the batch-size sweep, with horizon = 10% of
/// each.
pub const BATCH_SWEEP_SIZES: [usize; 5] = [100, 150, 200, 250, 300];

/// Labels fractions like "10%" for file and column names.
pub fn fraction_label(fraction: f64) -> String {
    format!("{}%", (fraction * 100.0).round() as i64)
}

/// Order-stable map from fraction label to value for a sweep.
pub fn labeled_fractions(fractions: &[f64]) -> Vec<(String, f64)> {
    fractions.iter().map(|&f| (fraction_label(f), f)).collect()
}

pub type LabeledHistories<T> = BTreeMap<String, T>;

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_config_matches_reference_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.batch_len, 200);
        assert_eq!(cfg.train.horizon, 20);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.federation.num_local, 5);
        assert_eq!(cfg.federation.rounds, 10);
        assert_eq!(cfg.federation.cluster_size, 6);
        assert_eq!(cfg.detection.threshold_ms, 10.0);
        assert_eq!(cfg.attack.margin_ms, 25.0);
        assert_eq!(cfg.train.net.hidden_sizes, vec![64, 128, 256]);
    }

    #[test]
    fn unknown_key_named_in_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "foo = 1").unwrap();
        match load_config(f.path()) {
            Err(Error::Config(msg)) => assert!(msg.contains("foo"), "message: {}", msg),
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn out_of_range_fraction_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "[attack]\nfraction = 1.5").unwrap();
        match load_config(f.path()) {
            Err(Error::Config(msg)) => assert!(msg.contains("[0,1]")),
            other => panic!("expected config error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn attack_start_defaults_to_batch_len() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.attack_start_slot(), 200);
        let mut cfg = ExperimentConfig::default();
        cfg.attack.start_slot = Some(5);
        assert_eq!(cfg.attack_start_slot(), 5);
    }

    #[test]
    fn shipped_example_config_loads() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.attack.fractions().len(), 5);
    }

    #[test]
    fn fraction_labels() {
        assert_eq!(fraction_label(0.1), "10%");
        assert_eq!(fraction_label(0.5), "50%");
    }
}
