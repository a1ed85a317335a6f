use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("operation not supported for the {0} family")]
    UnsupportedFamily(&'static str),

    #[error("infeasible risk target: epsilon {epsilon} must exceed irreducible risk {r_irr}")]
    InfeasibleTarget { epsilon: f64, r_irr: f64 },

    #[error("no sample size up to {limit} reaches the residual target {target}")]
    BudgetOverflow { target: f64, limit: u64 },

    #[error("empty sequence: {0}")]
    EmptySequence(&'static str),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate (zero-norm) vector in {0}")]
    DegenerateVector(&'static str),

    #[error("distribution does not sum to one (sum = {sum})")]
    Normalization { sum: f64 },

    #[error("cannot separate {archetypes} archetypes in {dim} dimensions")]
    Dimensionality { archetypes: usize, dim: usize },

    #[error("budget exhausted before any candidate was scored")]
    Budget { best_effort: Option<String> },

    #[error("controller already stopped")]
    AlreadyStopped,

    #[error("backend error: {0}")]
    Backend(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("instance {instance_id} failed after {} completed records: {source}", partial.len())]
    Campaign {
        instance_id: u64,
        #[source]
        source: Box<Error>,
        /// Records finished before the failure, sorted.
        partial: Vec<crate::experiment::ExperimentRecord>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::ParameterDomain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
