use thiserror::Error;

/// Errors shared by every module of the crate.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("inputs live on different domains")]
    DomainMismatch,
    #[error("truncation radius {r} exceeds half period {max}")]
    TruncationTooLarge { r: f64, max: f64 },
    #[error("kernel is not finite at node y = {y}")]
    KernelNonFinite { y: f64 },
    #[error("exponent {0} is not in [1, inf]")]
    InvalidExponent(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("work estimate {work} exceeds budget {budget}; use the kernel form instead")]
    BudgetExceeded { work: u128, budget: u128 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::InvalidArgument(msg.into()))
}
