use thiserror::Error;

/// Errors produced by the EAHT library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("observation has zero likelihood under every hypothesis with positive belief")]
    ZeroLikelihood,

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("parameter out of range: {0}")]
    ParamOutOfRange(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("agent index {agent} out of range for {agents} agents")]
    BadAgentIndex { agent: usize, agents: usize },

    #[error("invalid action {action} (model has {actions} actions)")]
    InvalidAction { action: usize, actions: usize },

    #[error("observation not in the support of the model: {0}")]
    InvalidObservation(String),

    #[error("ricean calibration diverged: legitimate flip probability {flip} at the highest power level")]
    CalibrationDiverged { flip: f64 },

    #[error("fitness evaluation failed for row {row}: {source}")]
    EvaluationFailed {
        row: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration at `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("genome architecture does not match the environment: expected {expected}, found {found}")]
    GenomeArchMismatch { expected: String, found: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
