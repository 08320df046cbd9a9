use thiserror::Error;

use crate::sim::SimError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arm index {index} out of range for {arms} arm(s)")]
    ArmIndex { index: usize, arms: usize },

    #[error("invalid domain: {0}")]
    Domain(String),

    #[error("invalid belief: {0}")]
    Belief(String),

    #[error("budget {0} is outside (0, 1]")]
    Budget(f64),

    #[error("high-fidelity runtime must be positive, got {0}")]
    NonPositiveRuntime(f64),

    #[error("inconsistent assignment: {0}")]
    Consistency(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("invalid phase plan: {0}")]
    Plan(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Simulator(#[from] SimError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
