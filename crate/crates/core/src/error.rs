use thiserror::Error;

use crate::pulse::Protocol;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input lists have mismatched lengths ({what}: {left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown basis {0:?} (expected X or Y)")]
    UnknownBasis(String),

    #[error("configuration is for {got}, operation requires {expected}")]
    WrongProtocol { expected: Protocol, got: Protocol },

    #[error("loss must be non-negative, got {0} dB")]
    NegativeLoss(f64),

    #[error("mean photon number must be non-negative, got {0}")]
    NegativeIntensity(f64),

    #[error("probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),

    #[error("train clock rate {train} Hz does not match receiver clock rate {receiver} Hz")]
    ClockMismatch { train: f64, receiver: f64 },

    #[error("no receiver chip for clock rate {0} Hz")]
    UnknownClockRate(f64),

    #[error("decoy precondition violated: need 0 < nu < mu (mu = {mu}, nu = {nu})")]
    DecoyPrecondition { mu: f64, nu: f64 },

    #[error("single-photon yield lower bound is {0}, statistics too poor for a key")]
    NoSinglePhotonYield(f64),

    #[error("histogram does not match pulse train: {0}")]
    HistogramMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
