use thiserror::Error;

use crate::types::HorizonSolution;

/// Failures raised while evaluating a system model.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("attitude kinematics singular at pitch {pitch} (sec(theta) undefined)")]
    Singularity { pitch: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown model id `{0}`")]
    UnknownModel(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// Failures of a single finite-horizon solve.
#[derive(Debug, Clone, Error)]
pub enum SolverError {
    #[error("rollout produced a non-finite value at window step {step}")]
    DivergedRollout { step: usize },
    #[error("Levenberg-Marquardt stalled after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    Stalled {
        iterations: usize,
        grad_norm: f64,
        best: Box<HorizonSolution>,
    },
    #[error("model `{0}` is not linear with additive disturbance; use the nonlinear solver")]
    UnsupportedModel(String),
    #[error("linear horizon problem is singular (block {block} not positive definite)")]
    Singular { block: usize },
    #[error("invalid horizon problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Crate-level error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver failed{}: {source}", at_time(*.t))]
    Solver {
        t: Option<i64>,
        #[source]
        source: SolverError,
    },
    #[error("matrix `{0}` is not symmetric positive definite")]
    NotPositiveDefinite(String),
    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state left the constraint set at t = {t} (component {component}, value {value})")]
    ConstraintViolation { t: i64, component: usize, value: f64 },
    #[error("ground truth is not available in this batch")]
    MissingTruth,
    #[error("index {0} is outside the available range")]
    OutOfRange(i64),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("extended-window benchmark did not converge after {doublings} doublings (last change {last_delta:.3e})")]
    NoConvergence { doublings: usize, last_delta: f64 },
    #[error("digest mismatch: {0}")]
    DigestMismatch(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn at_time(t: Option<i64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

impl Error {
    pub fn solver_at(t: i64) -> impl FnOnce(SolverError) -> Error {
        move |source| Error::Solver { t: Some(t), source }
    }

    /// True for failures of the numerical solver (as opposed to bad inputs).
    pub fn is_solver_failure(&self) -> bool {
        matches!(self, Error::Solver { .. } | Error::NoConvergence { .. })
    }
}

impl From<SolverError> for Error {
    fn from(source: SolverError) -> Self {
        Error::Solver { t: None, source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
