use thiserror::Error;

use crate::nn::TrainReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("not enough {direction} measurements: need at least {needed}, got {got}")]
    Unidentifiable {
        direction: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("regression matrix is rank deficient; the {direction} direction is not identifiable")]
    Singular { direction: &'static str },

    #[error("delay is undefined: {0}")]
    UndefinedDelay(String),

    #[error("pulse at {amplitude} V did not settle: velocity range {range:.3e} exceeds 2% of mean {mean:.3e}")]
    NotSettled {
        amplitude: f64,
        range: f64,
        mean: f64,
    },

    #[error("control loop saturated on {fraction:.1}% of samples (limit {limit} V)")]
    Saturated { fraction: f64, limit: f64 },

    #[error("series too short: {0}")]
    TooShort(String),

    #[error("input arity mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training loss became non-finite at epoch {}", .0.epochs)]
    NonFiniteLoss(Box<TrainReport>),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used in the CLI error document.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::NonFinite { .. } => "non_finite",
            Error::Unidentifiable { .. } => "unidentifiable",
            Error::Singular { .. } => "singular",
            Error::UndefinedDelay(_) => "undefined_delay",
            Error::NotSettled { .. } => "not_settled",
            Error::Saturated { .. } => "saturated",
            Error::TooShort(_) => "too_short",
            Error::Arity { .. } => "arity",
            Error::EmptyDataset => "empty_dataset",
            Error::NonFiniteLoss(_) => "non_finite_loss",
            Error::UnknownName { .. } => "unknown_name",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
