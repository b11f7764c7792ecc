use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel is singular on the diagonal r = rho = {0}")]
    Singularity(f64),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("quadrature failed to converge: {0}")]
    QuadratureFailure(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("matrix is singular at pivot {0}")]
    SingularMatrix(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("Newton iterate left the positive cone and backtracking could not restore it")]
    PositivityLoss,

    #[error("weight degeneracy: {0}")]
    WeightDegeneracy(String),

    #[error("no mesh nodes inside the boundary layer of width {0}")]
    EmptyLayer(f64),

    #[error("sign indeterminate: {zeroed} of {total} nodes below threshold")]
    IndeterminateSign { zeroed: usize, total: usize },

    #[error("Richardson extrapolation diverged: {0}")]
    ExtrapolationDivergence(String),

    #[error("continuation alarm at {parameter} = {value}: {reason}")]
    ContinuationAlarm {
        parameter: String,
        value: f64,
        reason: String,
    },

    #[error("cache format error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
