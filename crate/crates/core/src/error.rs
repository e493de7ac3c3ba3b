use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at atom {index}")]
    NonFiniteAtom { index: usize, value: f64 },

    #[error("non-finite integrand value {value} at event {index} (time {time})")]
    NonFiniteEvent { index: usize, time: f64, value: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("time {time} is not on the grid (step {step})")]
    OffGrid { time: f64, step: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("population cap {cap} exceeded at t = {time} ({count} particles, {events} events so far)")]
    PopulationCap { cap: usize, time: f64, count: usize, events: usize },

    #[error("linear program failed: {0}")]
    LinearProgram(String),

    #[error("factorization failed at ridge {ridge:e}; increase the ridge or prune the basis")]
    Factorization { ridge: f64 },

    #[error("corrupt file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
