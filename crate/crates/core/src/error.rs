use thiserror::Error;

use crate::config::SchedulingPolicy;

/// Errors shared by every module in the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An input violated a structural precondition.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A policy, blocking matrix, or report did not match the configuration.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A slot, user, or sub-carrier index fell outside the configured range.
    #[error("index out of range: {0}")]
    OutOfRange(String),

    /// A blocking run cannot be placed inside the horizon with the given budget.
    #[error("infeasible placement: {0}")]
    InfeasiblePlacement(String),

    /// A closed-form marginal vector left the feasible box [0, 1]^N.
    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),

    /// An exhaustive search would exceed the evaluation cap.
    #[error("search space of ~{estimate:.3e} blocking matrices exceeds cap {cap}")]
    SearchSpaceTooLarge { estimate: f64, cap: u64 },

    /// The numeric optimizer hit its iteration cap; `best` is the last iterate.
    #[error("optimizer stopped after {iterations} iterations without converging (objective {objective})")]
    NoConvergence {
        iterations: usize,
        objective: f64,
        best: SchedulingPolicy,
    },

    /// An equilibrium deviation audit found a profitable deviation.
    #[error("audit failure: {deviator} deviation `{description}` moved the value from {candidate_value} to {deviation_value}")]
    AuditFailure {
        deviator: String,
        description: String,
        candidate_value: f64,
        deviation_value: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
