use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty transaction set at t={t}, x={x:?}")]
    EmptyTransactionSet { t: f64, x: Vec<f64> },

    #[error("control set B is empty")]
    EmptyControlSet,

    #[error("degenerate bounding box: {0}")]
    DegenerateBox(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("time-dependent data cannot be transformed to an elliptic problem: {0}")]
    TimeDependent(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid Levy model: {0}")]
    InvalidLevy(String),

    #[error("local Hessian unavailable for small-jump integral")]
    MissingHessian,

    #[error("scheme is not monotone at node {node}: off-diagonal coefficient {coefficient:e} towards node {column}; refine or grade the grid")]
    NonMonotone {
        node: usize,
        column: usize,
        coefficient: f64,
    },

    #[error("intervention operator failed at node {node}: {source}")]
    AtNode {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("terminal iteration did not converge in {sweeps} sweeps, residual max(Mu-u)+ = {residual:e}")]
    TerminalNotConverged { sweeps: usize, residual: f64 },

    #[error("policy iteration did not converge after {iterations} iterations; residual history {history:?}")]
    PolicyIteration { iterations: usize, history: Vec<f64> },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("solve failed at time level {level}: {source}")]
    AtLevel {
        level: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("discount rate {rho} does not dominate the far-field growth excess {excess:e}; increase rho")]
    DiscountTooSmall { rho: f64, excess: f64 },

    #[error("no strict supersolution certified on the ladder; best margin {best_margin:e}")]
    SupersolutionNotFound { best_margin: f64 },

    #[error("Monte Carlo: {0}")]
    MonteCarlo(String),

    #[error("config: {0}")]
    Config(String),

    #[error("config has {} violation(s):\n  {}", .0.len(), .0.join("\n  "))]
    ConfigViolations(Vec<String>),

    #[error("checksum mismatch for {path}: {detail}")]
    Checksum { path: PathBuf, detail: String },

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("malformed artifact {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_node(node: usize, source: Error) -> Self {
        Error::AtNode {
            node,
            source: Box::new(source),
        }
    }

    pub(crate) fn at_level(level: usize, source: Error) -> Self {
        Error::AtLevel {
            level,
            source: Box::new(source),
        }
    }
}
