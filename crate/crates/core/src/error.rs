use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value out of domain: {0}")]
    OutOfDomain(String),

    #[error("negative input: {0}")]
    NegativeInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate density: K^2 d2C/dK2 = {0:e} is not positive")]
    DegenerateDensity(f64),

    #[error("negative local variance numerator {0:e}")]
    NegativeVariance(f64),

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("network parameters contain non-finite entries")]
    NonFiniteParams,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training diverged at iteration {iteration}: {reason}")]
    DivergedTraining { iteration: usize, reason: String },

    #[error("volatility field returned {value} at spot {spot}, time {time}")]
    VolFieldFailure { spot: f64, time: f64, value: f64 },

    #[error("maturity {0} is outside the simulated horizon")]
    MaturityOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("format version mismatch: {0}")]
    VersionMismatch(String),

    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },

    #[error("no valid quotes left in {0} after validation")]
    EmptyAfterValidation(PathBuf),

    #[error("schema violation: {0}")]
    SchemaViolation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
