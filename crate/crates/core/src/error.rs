use thiserror::Error;

/// Errors raised by the modelling, estimation and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain where the computation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("index error: {0}")]
    Index(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// Simulated state left the range where the discretisation is meaningful.
    #[error("simulation blow-up on day {day}: {reason}")]
    BlowUp { day: usize, reason: String },

    #[error("optimizer failed to converge: {0}")]
    NonConvergence(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("zero-variance input")]
    ZeroVariance,

    #[error("identical forecasts")]
    IdenticalForecasts,
}

pub type Result<T> = std::result::Result<T, Error>;
