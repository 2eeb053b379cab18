//! Representation-learning RL on finite low-rank MDPs.
//!
//! A low-rank MDP factors its transition kernel as
//! `P(s'|s,a) = mu(s')^T phi(s,a)` with d-dimensional embeddings `mu`, `phi`.
//! Neither embedding is known to the learner; it only has a finite class of
//! candidate factorizations containing the truth.
//!
//! The crate provides:
//!
//! - [`mdp`]: the factorized MDP representation, exact policy evaluation and
//!   occupancy computation (direct linear solves), roll-in sampling, and the
//!   two-sided simulation-gap identity.
//! - [`models`]: finite model classes, the exact MLE oracle over them, and
//!   total-variation error diagnostics.
//! - [`planner`]: exact value iteration on an induced tabular model with an
//!   arbitrary bounded effective reward.
//! - [`rep_ucb`]: the online loop (roll-in data collection, MLE refit,
//!   elliptical exploration bonus, optimistic planning) plus optimism and
//!   elliptical-potential diagnostics.
//! - [`rep_lcb`]: the offline counterpart (one MLE fit, elliptical penalty,
//!   pessimistic planning) plus partial-coverage diagnostics (relative
//!   condition number, behavior-policy omega).
//! - [`harness`]: environment generators (latent-variable, block, combination
//!   lock, random low-rank), decoy model-class construction, seeded experiment
//!   orchestration with CSV/JSON output, and invariant sweep suites.
//!
//! Every randomized operation takes an explicit RNG owned by the caller; all
//! domain types are immutable after construction. Parallelism happens only at
//! the whole-run level (one RNG per run).

pub mod error;
pub mod harness;
pub mod mdp;
pub mod models;
pub mod planner;
pub mod rep_lcb;
pub mod rep_ucb;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
