//! Exact analysis, strategy optimization, equilibrium verification, and
//! Monte Carlo simulation for update-age scheduling against a jamming
//! adversary.
//!
//! A base station serves `N` users over `T` slots with a stationary
//! randomized policy; an adversary with a jam budget of `floor(alpha * T)`
//! channel-slots erases scheduled updates to inflate the horizon-average
//! age. The crate computes exact expected ages for any (policy, blocking)
//! pair, searches both sides' best responses (exhaustively on small
//! instances, structurally at scale), evaluates the closed-form optimal
//! policies, audits equilibrium candidates, and validates every bound by
//! simulation.

pub mod adversary;
pub mod age;
pub mod config;
mod dd;
pub mod equilibrium;
pub mod error;
pub mod policy;
pub mod sim;

pub use config::{
    AgeIndexing, BlockEntry, BlockingMatrix, CbsSpec, SchedulingPolicy, SystemConfig,
    ValidationOutcome, Variant,
};
pub use error::{Error, Result};
