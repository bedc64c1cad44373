use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid partition count K = {k} for a test set of {n} samples")]
    InvalidK { k: usize, n: usize },

    #[error("invalid neighbour count k = {k} for a test set of {n} samples")]
    InvalidNeighbours { k: usize, n: usize },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("bound inapplicable: {0}")]
    BoundInapplicable(&'static str),

    #[error("inconsistent state: {0}")]
    InconsistentState(String),

    #[error("generator exhausted: requested {requested} samples, {available} available")]
    GeneratorExhausted { requested: usize, available: usize },

    #[error("generator exhausted after {used} samples; partial estimate {estimate}")]
    PartialEstimate { estimate: f64, used: usize },

    #[error("run stopped after {completed} completed iterations: {cause}")]
    PartialRun {
        completed: usize,
        cause: Box<Error>,
        /// Bound of the last completed iteration.
        last: Option<Box<crate::bound::BoundReport>>,
        trajectory: Vec<crate::osyn::TrajectoryPoint>,
    },

    #[error("no valid bound: {0}")]
    NoValidBound(String),

    #[error("loss {loss} exceeds the declared loss bound {bound}")]
    LossExceedsBound { loss: f64, bound: f64 },

    #[error("composition unachievable: {0}")]
    Composition(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("join error: sample id {0:?} has no loss entry")]
    Join(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parameter(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
