use thiserror::Error;

/// Errors produced by problem evaluation, linear algebra, integration and
/// tracking.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of operands disagree (matrix/vector dimensions).
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A matrix that must be symmetric positive definite failed the
    /// factorization (non-positive pivot). For constraint Gram matrices this
    /// signals loss of constraint qualification.
    #[error("singular or indefinite matrix in {context} (pivot {pivot:.3e} at row {row})")]
    Singular {
        context: String,
        row: usize,
        pivot: f64,
    },

    /// A point violates an inequality constraint where feasibility is
    /// required.
    #[error("infeasible point: constraint {index} has value {value:.6e} > tolerance {tol:.1e}")]
    Infeasible { index: usize, value: f64, tol: f64 },

    /// A problem is missing evaluators or was configured inconsistently.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Catalog lookup with an unknown problem name.
    #[error("unknown problem '{name}'; valid names: {valid}")]
    UnknownProblem { name: String, valid: String },

    /// An evaluator returned a non-finite value.
    #[error("non-finite value from {what} at t={t:.6} x={x:?}")]
    Evaluation { what: String, t: f64, x: Vec<f64> },

    /// A Runge-Kutta stage became non-finite.
    #[error("divergence at t={t:.6} (stage {stage})")]
    Divergence { t: f64, stage: usize },

    /// A step or iteration budget was exhausted.
    #[error("budget exceeded in {context}: {detail}")]
    Budget { context: &'static str, detail: String },

    /// The inner multiplier relaxation failed to reach its threshold.
    #[error(
        "inner relaxation stalled after {iterations} iterations (residual {residual:.3e} > {threshold:.3e})"
    )]
    RelaxationStall {
        iterations: usize,
        residual: f64,
        threshold: f64,
    },

    /// A static solve did not reach the requested stationarity tolerance.
    #[error("no convergence in {context}: last residual {residual:.3e} > tol {tol:.1e}")]
    NoConvergence {
        context: &'static str,
        residual: f64,
        tol: f64,
    },

    /// An operation was asked for outside its supported range.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A time interval was given in the wrong order.
    #[error("interval out of order: t1={t1} < t0={t0}")]
    Ordering { t0: f64, t1: f64 },

    /// A tracking failure annotated with the segment it occurred in.
    #[error("segment {index} [{start:.6}, {end:.6}]: {source}")]
    Segment {
        index: usize,
        start: f64,
        end: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
