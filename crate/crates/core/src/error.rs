use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("algebraic Jacobian is singular (regularity violated): {0}")]
    RegularityViolation(String),

    #[error(
        "algebraic solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    AlgebraicSolveFailure { iterations: usize, residual: f64 },

    #[error("model infeasible: {0}")]
    ModelInfeasible(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory aborted at t = {time}: {reason}")]
    TrajectoryAborted { time: f64, reason: String },

    #[error("trajectory diverged at t = {time}")]
    TrajectoryDiverged { time: f64 },

    #[error("trajectory did not converge (final norm {final_norm:e} >= xi {xi:e})")]
    NotStableSample { final_norm: f64, xi: f64 },

    #[error("kernel matrix ill-conditioned at window step {step}")]
    IllConditionedKernel { step: u64 },

    #[error("posterior variance {variance:e} is negative")]
    PosteriorInconsistency { variance: f64 },

    #[error("assessment step {iteration} found no stable sample after {attempts} attempts")]
    StepFailed { iteration: usize, attempts: usize },

    #[error("every grid point of the sampling domain is excluded")]
    DomainExhausted,

    #[error("equilibrium is not asymptotically stable (reduced Jacobian is not Hurwitz)")]
    UnstableEquilibrium,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
