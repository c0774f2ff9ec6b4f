use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite loss encountered")]
    NonFiniteLoss,

    #[error("training diverged at mini-batch {batch_index}")]
    TrainingDivergence { batch_index: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("GP fit failed: {0}")]
    GpFit(String),

    #[error("simulation blew up at step {step}")]
    SimulationBlowUp { step: usize },

    #[error("decision rule unsupported here: {0}")]
    UnsupportedRule(String),

    #[error("target volume {target} unreachable; best achieved {best_volume}")]
    InfeasibleTarget { target: f64, best_volume: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
