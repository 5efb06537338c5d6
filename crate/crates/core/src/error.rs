use thiserror::Error;

/// Errors produced by model construction, linear algebra kernels and solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix not symmetric: |M[{i},{j}] - M[{j},{i}]| = {dev:.3e} exceeds {tol:.3e}")]
    NotSymmetric { i: usize, j: usize, dev: f64, tol: f64 },

    #[error("non-finite entry at ({i}, {j})")]
    NonFinite { i: usize, j: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("eigensolver did not converge after {restarts} restarts (worst residual {worst_residual:.3e})")]
    EigNoConvergence {
        restarts: usize,
        worst_residual: f64,
        /// Best Ritz pairs found so far, for diagnostics and recovery.
        best: Box<crate::linalg::EigPairs>,
    },

    #[error("infeasible dual point: u[{index}] = {value:.3e} < 0 on an inequality index")]
    InfeasibleDual { index: usize, value: f64 },

    #[error("zero matrix cannot be normalized ({})", match .index { Some(i) => format!("constraint {i}"), None => "objective".to_string() })]
    ZeroMatrix { index: Option<usize> },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("inner linear solver failed: {0}")]
    InnerSolver(String),

    #[error("stale cache: {0}")]
    StaleCache(String),
}

pub type Result<T> = std::result::Result<T, Error>;
