//! Crate-wide error type.

/// Errors produced by the simulation and key-rate pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A conditional observable has probability-zero conditioning event.
    #[error("undefined observable: {0}")]
    UndefinedObservable(String),

    /// Adaptive integration ran out of budget before reaching the
    /// requested tolerance. Carries the best estimate obtained.
    #[error("tolerance not reached: best estimate {value:e} with error {error:e} (requested {requested:e})")]
    ToleranceNotReached {
        value: f64,
        error: f64,
        requested: f64,
    },

    /// An integrand or intermediate quantity evaluated to NaN/inf.
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
