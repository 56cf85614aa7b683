//! Federated continual anomaly detection over vehicular delay telemetry.
//!
//! The pipeline: ingest (or synthesize) per-vehicle delay reports, train a
//! GRU sequence regressor at each local edge node over a sliding window,
//! aggregate the local models into a global model by federated averaging,
//! predict the next slots of delay per node, and flag vehicles whose
//! reported delays deviate from the prediction beyond a threshold.

pub mod attack;
pub mod config;
pub mod detector;
pub mod experiment;
pub mod federation;
pub mod grunet;
pub mod metrics;
pub mod seed;
pub mod traces;

pub use config::ExperimentConfig;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("no usable trace data")]
    EmptyTrace,
    #[error("cannot invert degenerate normalization")]
    DegenerateNorm,
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("round {round} aborted: {reason}")]
    RoundAborted { round: usize, reason: String },
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
