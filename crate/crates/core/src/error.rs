use thiserror::Error;

/// Errors raised by grid construction, simulation and the estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("time {time} is not a knot of the fine grid")]
    NotAKnot { time: f64 },

    #[error("time {time} outside the admissible range [{lo}, {hi}]")]
    TimeOutOfRange { time: f64, lo: f64, hi: f64 },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("{what} magnitude {value} exceeds the configured bound {bound} at step {step}")]
    CoefficientBound {
        what: &'static str,
        value: f64,
        bound: f64,
        step: usize,
    },

    #[error("diffusion matrix is singular at step {step} (t = {time})")]
    SingularDiffusion { step: usize, time: f64 },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("policy kind {got} is not accepted here (expected {expected})")]
    PolicyKind {
        expected: &'static str,
        got: &'static str,
    },

    #[error("explicit scheme is not monotone with n_t = {n_t}; need n_t >= {required}")]
    Cfl { n_t: usize, required: usize },

    #[error("path {index}: {source}")]
    Path { index: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
