use alloc::string::String;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("no signal yet")]
    NoSignal,

    #[error("parameter outside its domain: {0}")]
    ParameterDomain(String),

    #[error("unknown skill `{0}`")]
    UnknownSkill(String),

    #[error("events out of order: timestamp {current} after {previous}")]
    OutOfOrder { previous: u64, current: u64 },

    #[error("event belongs to student `{found}`, state tracks `{expected}`")]
    StudentMismatch { expected: String, found: String },

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty prediction set")]
    EmptySet,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("solver did not converge: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
