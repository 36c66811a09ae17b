use thiserror::Error;

use crate::telemetry::UserId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("projection needs at least one dimension")]
    EmptyProjection,
    #[error("vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference consumption vector has zero norm")]
    DegenerateReference,
    #[error("tendency vector is constant")]
    DegenerateTendency,
    #[error("need at least {needed} samples, got {got}")]
    InsufficientHistory { needed: usize, got: usize },
    #[error("classifier has no reference profiles yet")]
    NotWarmedUp,
    #[error("trace for request {0} is not finished")]
    UnfinishedTrace(u64),
    #[error("verdict given for user {0}, who was not served this round")]
    UnservedVerdict(UserId),
    #[error("no verdict for served user {0}")]
    MissingVerdict(UserId),
    #[error("no round is in progress")]
    NoActiveRound,
    #[error("run has zero duration")]
    DegenerateRun,
    #[error("unknown policy `{0}` (expected ours, fcfs or rr)")]
    UnknownPolicy(String),
    #[error("unknown component `{0}` (expected polling or suppression)")]
    UnknownComponent(String),
    #[error("invalid value at {pointer}: {message}")]
    Validation { pointer: String, message: String },
    #[error("run exceeded {0} rounds")]
    RoundLimit(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    /// Errors caused by bad input rather than by a failure during a run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::UnknownPolicy(_) | Error::UnknownComponent(_)
        )
    }
}
