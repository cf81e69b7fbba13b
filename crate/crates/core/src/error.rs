use thiserror::Error;

/// Errors raised by the simulation and verification engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("negative drift duration {0}")]
    NegativeDuration(f64),

    #[error("service jump from empty system")]
    ServiceFromEmpty,

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid measure flow: {0}")]
    InvalidFlow(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel violates declared bounds: rate {rate} exceeds {bound} at t = {t}")]
    BoundViolation { rate: f64, bound: f64, t: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("frozen-delay scheme violated: {0}")]
    SchemeViolation(String),

    #[error("A4 violated: density undefined ({0})")]
    DensityUndefined(String),

    #[error("quadrature: {0}")]
    Quadrature(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
