//! Error types shared across the crate.
//!
//! Two families: [`DataError`] for anything that comes from files or
//! violates dataset invariants, and [`ModelError`] for numeric failures
//! and contract violations during model evaluation. Shape mismatches in
//! the autodiff layer are programmer errors and panic instead.

use thiserror::Error;

/// Errors raised while loading, validating, or writing datasets.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sequence {seq_id} (user {user_id}): {msg}")]
    InvalidSequence {
        user_id: String,
        seq_id: String,
        msg: String,
    },

    #[error("user {user_id} appears in more than one split")]
    SplitOverlap { user_id: String },

    #[error("duplicate user id {user_id} within split")]
    DuplicateUser { user_id: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Invalid(String),
}

/// Errors raised during model evaluation, training, or sampling.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("intensity queried at t={t} but state is conditioned up to t_last={t_last}")]
    NonCausalQuery { t: f64, t_last: f64 },

    #[error("event at t={t} does not follow state time t_last={t_last}")]
    NonIncreasingTime { t: f64, t_last: f64 },

    #[error("non-finite intensity (parameter blow-up); clamp events so far: {clamp_events}")]
    NonFiniteIntensity { clamp_events: u64 },

    #[error("non-finite loss at step {step} (clamp events {clamp_events}, grad norm {grad_norm})")]
    NonFiniteLoss {
        step: usize,
        clamp_events: u64,
        grad_norm: f64,
    },

    #[error("mark {mark} out of range for vocabulary size {k}")]
    MarkOutOfRange { mark: usize, k: usize },

    #[error("cannot encode an empty sequence")]
    EmptySequence,

    #[error("thinning exceeded {max} dominating-rate escalations (last lambda_star={lambda_star})")]
    MaxEscalations { max: usize, lambda_star: f64 },

    #[error("captured probability mass {mass:.3e} below threshold; raise the horizon cap")]
    NegligibleMass { mass: f64 },

    #[error("{0}")]
    Invalid(String),
}
