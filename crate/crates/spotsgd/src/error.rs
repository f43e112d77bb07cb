//! Crate-wide error type. Infeasibility classes are distinct variants so the
//! CLI can map them onto its documented exit codes.

use thiserror::Error;

/// Errors produced by models, optimizers, the simulator, and the CLI plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The bid is never accepted: the price CDF is zero at this bid, so the
    /// completion time is unbounded.
    #[error("infeasible bid {bid}: acceptance probability F(bid) = 0")]
    InfeasibleBid { bid: f64 },

    /// The deadline cannot be met even with uninterrupted workers.
    #[error("infeasible deadline {deadline}: at least {required} seconds are needed even without interruptions")]
    InfeasibleDeadline { required: f64, deadline: f64 },

    /// The target error lies at or below the asymptotic noise floor, so no
    /// iteration count can reach it.
    #[error("error target {target} is at or below the reachable floor {floor}")]
    ErrorFloor { floor: f64, target: f64 },

    /// The target error cannot be reached within the given iteration count.
    #[error("error target {target} is infeasible at this iteration count; the minimal feasible target is {min_feasible}")]
    InfeasibleTarget { min_feasible: f64, target: f64 },

    /// The inverse-moment budget Q(eps) falls outside (1/n, 1/n1], so the
    /// two-bid structure of the fixed-(n1, n, J) optimum does not apply.
    #[error("inverse-moment budget Q = {q} outside ({lo}, {hi}]{}", feasible_hint(.feasible_iterations))]
    QRange {
        q: f64,
        lo: f64,
        hi: f64,
        /// Iteration counts for which Q(eps) would land in range, when any.
        feasible_iterations: Option<(usize, Option<usize>)>,
    },

    /// A search found no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Trace-replay ran out of trace before the job finished.
    #[error("price trace exhausted after {completed_trials} whole trials (first truncation in trial {truncated_trial} at iteration {iteration})")]
    TraceTruncated {
        completed_trials: usize,
        truncated_trial: usize,
        iteration: usize,
        partial: Box<crate::sim::SimOutcome>,
    },

    /// SGD diverged (optimality gap exceeded the abort threshold).
    #[error("SGD diverged at iteration {iteration}: gap {gap:.3e} exceeds 1e12")]
    Divergence { iteration: usize, gap: f64 },

    /// Malformed input file.
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// Unknown or invalid key in a flat key-value config file.
    #[error("config error: {0}")]
    Config(String),

    #[error("internal check failed: {0}")]
    InternalCheck(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn feasible_hint(range: &Option<(usize, Option<usize>)>) -> String {
    match range {
        Some((lo, Some(hi))) => format!("; feasible iteration counts: {lo}..={hi}"),
        Some((lo, None)) => format!("; feasible iteration counts: >= {lo}"),
        None => "; no iteration count makes Q land in range".to_string(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
