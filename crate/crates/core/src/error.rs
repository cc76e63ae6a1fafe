use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mean period diverges: {0}")]
    DivergentPeriod(String),

    #[error("non-finite matrix entries in {0}")]
    NonFinite(&'static str),

    #[error("jump-time root finding failed: {0}")]
    RootFinding(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("record does not match schedule: {0}")]
    RecordMismatch(String),

    #[error("master-equation invariant violated at t = {t}: {what}")]
    InvariantViolation { t: f64, what: String },

    #[error("sample grid mismatch: {0}")]
    GridMismatch(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
