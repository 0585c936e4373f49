//! Shared error type for the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration field failed validation.
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("step index {t} out of range 1..={len}")]
    StepOutOfRange { t: usize, len: usize },

    #[error("trajectory is incomplete; use an n-step estimate instead")]
    IncompleteTrajectory,

    #[error("price {price} for customer {customer} outside [{min}, {max}]")]
    PriceOutOfBounds {
        customer: usize,
        price: f64,
        min: f64,
        max: f64,
    },

    #[error("price {price} for customer {customer} is not on the configured grid")]
    PriceOffGrid { customer: usize, price: f64 },

    #[error("cannot step a terminal observation (t={t} > horizon {horizon})")]
    TerminalStep { t: usize, horizon: usize },

    #[error("advantage batch is empty")]
    EmptyBatch,

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("dual solve did not converge: best |grad| {grad:.3e} at beta {beta:.3e}")]
    DualNoConvergence { grad: f64, beta: f64 },

    #[error("policy support mismatch: {0}")]
    SupportMismatch(String),

    #[error("advantage batch does not cover the policy support: {0}")]
    CoverageGap(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    TrainAbort {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid_config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
