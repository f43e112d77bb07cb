//! Optimal spot-instance bidding: the uniform (single-bid) optimum, the
//! two-group bid optimum at fixed sizes and iteration count, and exhaustive
//! co-optimization of the high-bid group size and the iteration count.
//!
//! Activity model: a worker is active in an iteration exactly when its bid is
//! at or above the prevailing spot price, and active time is charged at the
//! spot price. With bids `b1 >= b2` for groups of `n1` and `n - n1` workers,
//! the active count within an executed iteration is `n` when `price <= b2`
//! and `n1` otherwise; iterations execute only while `price <= b1`.

use serde::{Deserialize, Serialize};

use crate::convergence::{self, SgdConstants};
use crate::error::{Error, Result};
use crate::price::PriceModel;
use crate::runtime::RuntimeModel;

/// Relative tolerance used when checking bid-plan feasibility boundaries.
const FEAS_TOL: f64 = 1e-9;

/// What a training job demands: a target optimality gap and a wall-clock
/// deadline in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobRequirements {
    pub target_error: f64,
    pub deadline: f64,
}

impl JobRequirements {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_error > 0.0) || !(self.deadline > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "requirements must be positive, got error {} deadline {}",
                self.target_error, self.deadline
            )));
        }
        Ok(())
    }
}

/// A resolved bidding plan plus its predicted cost, completion time, and
/// error-bound value. Uniform-bid plans have `low_bid == high_bid` and
/// `high_group == total_workers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidPlan {
    /// Bid of the always-preferred group (b1).
    pub high_bid: f64,
    /// Bid of the cheap group (b2 <= b1).
    pub low_bid: f64,
    /// Workers bidding high (n1).
    pub high_group: usize,
    /// Total workers (n).
    pub total_workers: usize,
    /// Iteration count the plan budgets for.
    pub iterations: usize,
    pub expected_cost: f64,
    pub expected_completion: f64,
    pub expected_error: f64,
}

impl BidPlan {
    /// Structural invariants: bid ordering inside the price support and group
    /// sizing.
    pub fn validate(&self, price: &PriceModel) -> Result<()> {
        let (lo, hi) = (price.lower_bound(), price.upper_bound());
        if !(lo <= self.low_bid && self.low_bid <= self.high_bid && self.high_bid <= hi * (1.0 + FEAS_TOL)) {
            return Err(Error::InvalidParameter(format!(
                "bids ({}, {}) violate {lo} <= b2 <= b1 <= {hi}",
                self.high_bid, self.low_bid
            )));
        }
        if self.high_group < 1 || self.high_group > self.total_workers {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= n1 <= n, got n1 {} n {}",
                self.high_group, self.total_workers
            )));
        }
        Ok(())
    }

    fn is_uniform(&self) -> bool {
        self.low_bid == self.high_bid && self.high_group == self.total_workers
    }
}

/// Expected completion time of `iterations` iterations on `n` workers at a
/// single bid `b`: `J * E[R(n)] / F(b)`.
pub fn expected_completion_uniform(
    iterations: usize,
    n: usize,
    b: f64,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<f64> {
    let fb = price.cdf(b);
    if fb <= 0.0 {
        return Err(Error::InfeasibleBid { bid: b });
    }
    Ok(iterations as f64 * rt.expected_iteration_runtime(n)? / fb)
}

/// Expected cost of `iterations` iterations on `n` workers at a single bid
/// `b`: `J * n * E[R(n)] * E[price | price <= b]`.
pub fn expected_cost_uniform(
    iterations: usize,
    n: usize,
    b: f64,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<f64> {
    let mean_below = price.mean_price_below(b)?;
    Ok(iterations as f64 * n as f64 * rt.expected_iteration_runtime(n)? * mean_below)
}

/// Expected reciprocal of the active count under two bids:
/// `(1/F(b1)) * ((F(b1) - F(b2))/n1 + F(b2)/n)`.
pub fn expected_inverse_active(
    b1: f64,
    b2: f64,
    n1: usize,
    n: usize,
    price: &PriceModel,
) -> Result<f64> {
    if b2 > b1 {
        return Err(Error::InvalidParameter(format!("low bid {b2} above high bid {b1}")));
    }
    if n1 < 1 || n1 > n {
        return Err(Error::InvalidParameter(format!("need 1 <= n1 <= n, got {n1}, {n}")));
    }
    let f1 = price.cdf(b1);
    if f1 <= 0.0 {
        return Err(Error::InfeasibleBid { bid: b1 });
    }
    let gamma = price.cdf(b2) / f1;
    Ok((1.0 - gamma) / n1 as f64 + gamma / n as f64)
}

/// Expected cost under two bids, expanding the price integral over the two
/// activity regimes:
/// `J / F(b1) * [ n E[R(n)] * int_(lower, b2] p dF + n1 E[R(n1)] * int_(b2, b1] p dF ]`.
pub fn expected_cost_two_bids(
    iterations: usize,
    n1: usize,
    n: usize,
    b1: f64,
    b2: f64,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<f64> {
    if b2 > b1 {
        return Err(Error::InvalidParameter(format!("low bid {b2} above high bid {b1}")));
    }
    let f1 = price.cdf(b1);
    if f1 <= 0.0 {
        return Err(Error::InfeasibleBid { bid: b1 });
    }
    let lo = price.lower_bound();
    let both = price.partial_mean(lo, b2);
    let high_only = price.partial_mean(b2, b1);
    let r_n = rt.expected_iteration_runtime(n)?;
    let r_n1 = rt.expected_iteration_runtime(n1)?;
    Ok(iterations as f64 / f1 * (n as f64 * r_n * both + n1 as f64 * r_n1 * high_only))
}

/// Expected completion time under two bids:
/// `J / F(b1) * [ gamma * E[R(n)] + (1 - gamma) * E[R(n1)] ]` with
/// `gamma = F(b2)/F(b1)`.
pub fn expected_completion_two_bids(
    iterations: usize,
    n1: usize,
    n: usize,
    b1: f64,
    b2: f64,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<f64> {
    if b2 > b1 {
        return Err(Error::InvalidParameter(format!("low bid {b2} above high bid {b1}")));
    }
    let f1 = price.cdf(b1);
    if f1 <= 0.0 {
        return Err(Error::InfeasibleBid { bid: b1 });
    }
    let gamma = price.cdf(b2) / f1;
    let r_n = rt.expected_iteration_runtime(n)?;
    let r_n1 = rt.expected_iteration_runtime(n1)?;
    Ok(iterations as f64 / f1 * (gamma * r_n + (1.0 - gamma) * r_n1))
}

/// Assemble a [`BidPlan`] with predicted cost/completion/error for explicit
/// bids.
pub fn plan_for_bids(
    req: &JobRequirements,
    iterations: usize,
    n1: usize,
    n: usize,
    b1: f64,
    b2: f64,
    k: &SgdConstants,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<BidPlan> {
    req.validate()?;
    let cost = expected_cost_two_bids(iterations, n1, n, b1, b2, price, rt)?;
    let completion = expected_completion_two_bids(iterations, n1, n, b1, b2, price, rt)?;
    let e = expected_inverse_active(b1, b2, n1, n, price)?;
    let error = convergence::error_bound(k, &vec![e; iterations])?;
    let plan = BidPlan {
        high_bid: b1,
        low_bid: b2,
        high_group: n1,
        total_workers: n,
        iterations,
        expected_cost: cost,
        expected_completion: completion,
        expected_error: error,
    };
    plan.validate(price)?;
    Ok(plan)
}

/// The optimal single bid for `n` workers: run the minimal iteration count
/// that reaches the target at full strength, then bid
/// `F^{-1}(J * E[R(n)] / deadline)` so the expected completion exactly meets
/// the deadline.
pub fn optimal_uniform_bid(
    req: &JobRequirements,
    n: usize,
    k: &SgdConstants,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<BidPlan> {
    req.validate()?;
    let iterations = convergence::iterations_for_error(k, req.target_error, 1.0 / n as f64)?;
    let busy = iterations as f64 * rt.expected_iteration_runtime(n)?;
    if busy > req.deadline * (1.0 + FEAS_TOL) {
        return Err(Error::InfeasibleDeadline {
            required: busy,
            deadline: req.deadline,
        });
    }
    let b = price.quantile((busy / req.deadline).min(1.0));
    let mut plan = plan_for_bids(req, iterations, n, n, b, b, k, price, rt)?;
    // uniform plan by construction
    plan.high_group = n;
    plan.low_bid = plan.high_bid;
    Ok(plan)
}

/// Iteration counts for which the inverse-moment budget `Q(eps)` lands in
/// `[1/n, 1/n1]`. Returns `(first, Some(last))` or `(first, None)` when every
/// sufficiently large count stays in range.
pub fn feasible_two_bid_iterations(
    k: &SgdConstants,
    target_error: f64,
    n1: usize,
    n: usize,
) -> Result<(usize, Option<usize>)> {
    // smallest J with Q(J) >= 1/n, i.e. the bound at full strength reaches eps
    let first = convergence::iterations_for_error(k, target_error, 1.0 / n as f64)?.max(1);
    // Q is increasing in J; the range ends just before Q exceeds 1/n1
    match convergence::iterations_for_error(k, target_error, 1.0 / n1 as f64) {
        Ok(j_hi) => {
            let j_hi = j_hi.max(1);
            let q_hi = convergence::q_epsilon(k, target_error, j_hi)?;
            let last = if (q_hi - 1.0 / n1 as f64).abs() <= FEAS_TOL / n1 as f64 {
                j_hi
            } else {
                j_hi.saturating_sub(1)
            };
            if last < first {
                return Err(Error::QRange {
                    q: convergence::q_epsilon(k, target_error, first)?,
                    lo: 1.0 / n as f64,
                    hi: 1.0 / n1 as f64,
                    feasible_iterations: None,
                });
            }
            Ok((first, Some(last)))
        }
        // target below the n1-group noise floor: Q never exceeds 1/n1
        Err(Error::ErrorFloor { .. }) => Ok((first, None)),
        Err(e) => Err(e),
    }
}

/// The optimal two bids at fixed group sizes and iteration count:
/// `gamma* = (1/n1 - Q(eps)) / (1/n1 - 1/n)`,
/// `b1* = F^{-1}((J/theta) * ((E[R(n)] - E[R(n1)]) gamma* + E[R(n1)]))`,
/// `b2* = F^{-1}(gamma* F(b1*))`. Both the deadline and error constraints are
/// tight at the result (continuous price models).
pub fn optimal_two_bids(
    req: &JobRequirements,
    n1: usize,
    n: usize,
    iterations: usize,
    k: &SgdConstants,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<BidPlan> {
    req.validate()?;
    if n1 < 1 || n1 > n {
        return Err(Error::InvalidParameter(format!("need 1 <= n1 <= n, got {n1}, {n}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
    }
    let inv_n = 1.0 / n as f64;
    let inv_n1 = 1.0 / n1 as f64;
    let q = convergence::q_epsilon(k, req.target_error, iterations)?;
    // allow the degenerate uniform collapse at Q = 1/n exactly
    if q < inv_n * (1.0 - FEAS_TOL) || q > inv_n1 * (1.0 + FEAS_TOL) {
        return Err(Error::QRange {
            q,
            lo: inv_n,
            hi: inv_n1,
            feasible_iterations: feasible_two_bid_iterations(k, req.target_error, n1, n).ok(),
        });
    }
    let r_n = rt.expected_iteration_runtime(n)?;
    let r_n1 = rt.expected_iteration_runtime(n1)?;
    let busy = iterations as f64 * r_n;
    if busy > req.deadline * (1.0 + FEAS_TOL) {
        return Err(Error::InfeasibleDeadline {
            required: busy,
            deadline: req.deadline,
        });
    }
    let gamma = if n1 == n {
        1.0
    } else {
        ((inv_n1 - q) / (inv_n1 - inv_n)).clamp(0.0, 1.0)
    };
    let u1 = (iterations as f64 / req.deadline) * ((r_n - r_n1) * gamma + r_n1);
    let b1 = price.quantile(u1.min(1.0));
    let b2 = price.quantile(gamma * price.cdf(b1));
    plan_for_bids(req, iterations, n1, n, b1, b2.min(b1), k, price, rt)
}

/// Exhaustive co-optimization of the high-bid group size for a fixed total
/// worker count and iteration count: tries every `n1` in `1..=n`, keeps the
/// cheapest feasible plan. Ties break toward smaller `n1`, then smaller `b1`.
pub fn co_optimize_group_size(
    req: &JobRequirements,
    n: usize,
    iterations: usize,
    k: &SgdConstants,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<BidPlan> {
    let mut best: Option<BidPlan> = None;
    for n1 in 1..=n {
        let plan = match optimal_two_bids(req, n1, n, iterations, k, price, rt) {
            Ok(p) => p,
            Err(Error::QRange { .. }) | Err(Error::InfeasibleDeadline { .. }) => continue,
            Err(e) => return Err(e),
        };
        best = Some(match best {
            None => plan,
            Some(b) if plan_beats(&plan, &b) => plan,
            Some(b) => b,
        });
    }
    best.ok_or_else(|| Error::Infeasible("no feasible high-bid group size".into()))
}

/// Co-optimization of the iteration count at fixed group sizes: scans every
/// feasible J (budget in range, deadline met), applying the fixed-J optimum,
/// and returns the cheapest plan. Ties break toward smaller J.
pub fn co_optimize_iterations(
    req: &JobRequirements,
    n1: usize,
    n: usize,
    k: &SgdConstants,
    price: &PriceModel,
    rt: &RuntimeModel,
) -> Result<BidPlan> {
    req.validate()?;
    let (first, last) = feasible_two_bid_iterations(k, req.target_error, n1, n)?;
    let r_n = rt.expected_iteration_runtime(n)?;
    let deadline_cap = (req.deadline / r_n).floor() as usize;
    let last = last.unwrap_or(deadline_cap).min(deadline_cap);
    if last < first {
        return Err(Error::InfeasibleDeadline {
            required: first as f64 * r_n,
            deadline: req.deadline,
        });
    }
    let mut best: Option<BidPlan> = None;
    for iterations in first..=last {
        let plan = match optimal_two_bids(req, n1, n, iterations, k, price, rt) {
            Ok(p) => p,
            Err(Error::QRange { .. }) | Err(Error::InfeasibleDeadline { .. }) => continue,
            Err(e) => return Err(e),
        };
        best = Some(match best {
            None => plan,
            Some(b) if plan_beats(&plan, &b) => plan,
            Some(b) => b,
        });
    }
    best.ok_or_else(|| Error::Infeasible("no feasible iteration count".into()))
}

/// Deterministic tie-break: lower cost, then fewer iterations, then smaller
/// high group, then lower high bid.
fn plan_beats(a: &BidPlan, b: &BidPlan) -> bool {
    let key = |p: &BidPlan| {
        (
            p.expected_cost,
            p.iterations as f64,
            p.high_group as f64,
            p.high_bid,
        )
    };
    let (ka, kb) = (key(a), key(b));
    ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Less)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::price::make_uniform;

    fn constants() -> SgdConstants {
        SgdConstants {
            lipschitz: 1.0,
            strong_convexity: 1.0,
            moment_lower: 1.0,
            moment_upper: 1.0,
            variance_offset: 1.0,
            variance_scalar: 0.0,
            step_size: 0.1,
            initial_gap: 1.0,
        }
    }

    fn uniform_price() -> PriceModel {
        make_uniform(0.2, 1.0).unwrap()
    }

    fn exp_runtime() -> RuntimeModel {
        RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 }
    }

    /// Target error that makes Q(eps) = q_target at the given iteration count.
    fn target_for_budget(k: &SgdConstants, q_target: f64, iterations: usize) -> f64 {
        let beta = k.contraction();
        let decayed = beta.powi(iterations as i32) * k.initial_gap;
        decayed + k.noise_coefficient() * q_target * (1.0 - beta.powi(iterations as i32)) / (1.0 - beta)
    }

    #[test]
    fn completion_uniform_direct_substitution() {
        let price = uniform_price();
        let rt = RuntimeModel::Deterministic { time: 2.0, overhead: 0.0 };
        // J = 100, E[R] = 2, F(b) = 0.5 -> 400
        let v = expected_completion_uniform(100, 4, 0.6, &price, &rt).unwrap();
        assert!((v - 400.0).abs() < 1e-12);
        // bid at the top: never interrupted
        let v = expected_completion_uniform(100, 4, 1.0, &price, &rt).unwrap();
        assert!((v - 200.0).abs() < 1e-12);
        assert!(expected_completion_uniform(100, 4, 0.2, &price, &rt).is_err());
    }

    #[test]
    fn cost_uniform_worked_value() {
        let price = uniform_price();
        let rt = exp_runtime();
        // J=1000, n=4, b=0.6: 1000 * 4 * (25/12) * 0.4 = 10000/3
        let v = expected_cost_uniform(1000, 4, 0.6, &price, &rt).unwrap();
        assert!((v - 10_000.0 / 3.0).abs() < 1e-9);
        // b at the top charges the unconditional mean
        let v = expected_cost_uniform(1000, 4, 1.0, &price, &rt).unwrap();
        assert!((v - 1000.0 * 4.0 * (25.0 / 12.0) * 0.6).abs() < 1e-9);
    }

    #[test]
    fn lemma_monotonicities_on_grid() {
        let price = uniform_price();
        let rt = exp_runtime();
        let mut prev_c = f64::INFINITY;
        let mut prev_cost = 0.0;
        for i in 1..=100 {
            let b = 0.2 + 0.8 * i as f64 / 100.0;
            let c = expected_completion_uniform(500, 4, b, &price, &rt).unwrap();
            let cost = expected_cost_uniform(500, 4, b, &price, &rt).unwrap();
            assert!(c <= prev_c + 1e-9, "completion not non-increasing at {b}");
            assert!(cost >= prev_cost - 1e-9, "cost not non-decreasing at {b}");
            prev_c = c;
            prev_cost = cost;
        }
        // increasing in J
        assert!(
            expected_completion_uniform(501, 4, 0.6, &price, &rt).unwrap()
                > expected_completion_uniform(500, 4, 0.6, &price, &rt).unwrap()
        );
        assert!(
            expected_cost_uniform(501, 4, 0.6, &price, &rt).unwrap()
                > expected_cost_uniform(500, 4, 0.6, &price, &rt).unwrap()
        );
    }

    #[test]
    fn optimal_uniform_bid_quantile_form() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let n = 4;
        let iters = convergence::iterations_for_error(&k, 0.05, 0.25).unwrap();
        let busy = iters as f64 * rt.expected_iteration_runtime(n).unwrap();
        // deadline with 2x slack: quantile(0.5) = 0.6
        let req = JobRequirements { target_error: 0.05, deadline: 2.0 * busy };
        let plan = optimal_uniform_bid(&req, n, &k, &price, &rt).unwrap();
        assert!((plan.high_bid - 0.6).abs() < 1e-12);
        assert!(plan.is_uniform());
        // deadline tight, error at most the target
        assert!((plan.expected_completion - req.deadline).abs() / req.deadline < 1e-9);
        assert!(plan.expected_error <= req.target_error + 1e-12);
        // no slack: must bid the top
        let req = JobRequirements { target_error: 0.05, deadline: busy };
        let plan = optimal_uniform_bid(&req, n, &k, &price, &rt).unwrap();
        assert!((plan.high_bid - 1.0).abs() < 1e-9);
        // infeasible deadline
        let req = JobRequirements { target_error: 0.05, deadline: 0.5 * busy };
        assert!(matches!(
            optimal_uniform_bid(&req, n, &k, &price, &rt),
            Err(Error::InfeasibleDeadline { .. })
        ));
    }

    #[test]
    fn optimal_uniform_bid_beats_grid() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let n = 4;
        let req = JobRequirements { target_error: 0.05, deadline: 400.0 };
        let plan = optimal_uniform_bid(&req, n, &k, &price, &rt).unwrap();
        let iters = plan.iterations;
        for i in 1..=500 {
            let b = 0.2 + 0.8 * i as f64 / 500.0;
            let Ok(c) = expected_completion_uniform(iters, n, b, &price, &rt) else {
                continue;
            };
            if c > req.deadline * (1.0 + 1e-12) {
                continue;
            }
            let cost = expected_cost_uniform(iters, n, b, &price, &rt).unwrap();
            assert!(
                cost >= plan.expected_cost - 1e-9,
                "grid bid {b} beats optimum: {cost} < {}",
                plan.expected_cost
            );
        }
    }

    #[test]
    fn inverse_active_examples() {
        let price = uniform_price();
        // b2 = b1: everyone active together
        let v = expected_inverse_active(0.6, 0.6, 2, 4, &price).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        // F(b2) = 0: only the high group
        let v = expected_inverse_active(0.6, 0.2, 2, 4, &price).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        // gamma = 0.5: 0.5/2 + 0.5/4 = 0.375
        let v = expected_inverse_active(0.6, 0.4, 2, 4, &price).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
    }

    #[test]
    fn two_bid_formulas_collapse_to_uniform() {
        let price = uniform_price();
        let rt = exp_runtime();
        let (j, n1, n) = (1000, 2, 4);
        let cost2 = expected_cost_two_bids(j, n1, n, 0.6, 0.6, &price, &rt).unwrap();
        let cost1 = expected_cost_uniform(j, n, 0.6, &price, &rt).unwrap();
        assert!((cost2 - cost1).abs() < 1e-10, "{cost2} vs {cost1}");
        let c2 = expected_completion_two_bids(j, n1, n, 0.6, 0.6, &price, &rt).unwrap();
        let c1 = expected_completion_uniform(j, n, 0.6, &price, &rt).unwrap();
        assert!((c2 - c1).abs() < 1e-10);
        // second group never active: collapses to n1 workers
        let cost2 = expected_cost_two_bids(j, n1, n, 0.6, 0.2, &price, &rt).unwrap();
        let cost1 = expected_cost_uniform(j, n1, 0.6, &price, &rt).unwrap();
        assert!((cost2 - cost1).abs() < 1e-10);
        let c2 = expected_completion_two_bids(j, n1, n, 0.6, 0.2, &price, &rt).unwrap();
        let c1 = expected_completion_uniform(j, n1, 0.6, &price, &rt).unwrap();
        assert!((c2 - c1).abs() < 1e-10);
    }

    #[test]
    fn optimal_two_bids_worked_instance() {
        // n1=2, n=4, Q = 0.375 at J=50 -> gamma* = 0.5, b1* = 0.6, b2* = 0.4
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n1, n, j) = (2usize, 4usize, 50usize);
        let eps = target_for_budget(&k, 0.375, j);
        let r_n = 25.0 / 12.0;
        let r_n1 = 1.5;
        let theta = 2.0 * j as f64 * ((r_n - r_n1) * 0.5 + r_n1);
        let req = JobRequirements { target_error: eps, deadline: theta };
        let plan = optimal_two_bids(&req, n1, n, j, &k, &price, &rt).unwrap();
        assert!((plan.high_bid - 0.6).abs() < 1e-9, "b1 {}", plan.high_bid);
        assert!((plan.low_bid - 0.4).abs() < 1e-9, "b2 {}", plan.low_bid);
        // both constraints tight
        assert!((plan.expected_completion - theta).abs() / theta < 1e-9);
        assert!((plan.expected_error - eps).abs() / eps < 1e-9);
    }

    #[test]
    fn optimal_two_bids_degenerate_and_errors() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n1, n, j) = (2usize, 4usize, 50usize);
        // Q = 1/n: uniform-bid collapse
        let eps = target_for_budget(&k, 0.25, j);
        let req = JobRequirements { target_error: eps, deadline: 1e4 };
        let plan = optimal_two_bids(&req, n1, n, j, &k, &price, &rt).unwrap();
        assert!((plan.low_bid - plan.high_bid).abs() < 1e-9);
        // Q out of range
        let eps = target_for_budget(&k, 0.8, j);
        let req = JobRequirements { target_error: eps, deadline: 1e4 };
        match optimal_two_bids(&req, n1, n, j, &k, &price, &rt) {
            Err(Error::QRange { q, .. }) => assert!(q > 0.5),
            other => panic!("expected QRange, got {other:?}"),
        }
        // infeasible deadline
        let eps = target_for_budget(&k, 0.375, j);
        let req = JobRequirements { target_error: eps, deadline: 10.0 };
        assert!(matches!(
            optimal_two_bids(&req, n1, n, j, &k, &price, &rt),
            Err(Error::InfeasibleDeadline { .. })
        ));
    }

    #[test]
    fn optimal_two_bids_beats_grid_search() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n1, n, j) = (2usize, 4usize, 50usize);
        let eps = target_for_budget(&k, 0.375, j);
        let theta = 2.0 * j as f64 * ((25.0 / 12.0 - 1.5) * 0.5 + 1.5);
        let req = JobRequirements { target_error: eps, deadline: theta };
        let plan = optimal_two_bids(&req, n1, n, j, &k, &price, &rt).unwrap();

        let grid = 200;
        let mut best_cost = f64::INFINITY;
        let mut best_pair = (0.0, 0.0);
        for i in 0..=grid {
            let b1 = 0.2 + 0.8 * i as f64 / grid as f64;
            for l in 0..=i {
                let b2 = 0.2 + 0.8 * l as f64 / grid as f64;
                let Ok(e) = expected_inverse_active(b1, b2, n1, n, &price) else {
                    continue;
                };
                let err = convergence::error_bound(&k, &vec![e; j]).unwrap();
                if err > eps * (1.0 + 1e-12) {
                    continue;
                }
                let c = expected_completion_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
                if c > theta * (1.0 + 1e-12) {
                    continue;
                }
                let cost = expected_cost_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
                if cost < best_cost {
                    best_cost = cost;
                    best_pair = (b1, b2);
                }
            }
        }
        let step = 0.8 / grid as f64;
        assert!(
            plan.expected_cost <= best_cost + plan.expected_cost * 0.02,
            "grid {best_cost} at {best_pair:?} beats analytic {}",
            plan.expected_cost
        );
        assert!((best_pair.0 - plan.high_bid).abs() <= step + 1e-12);
        assert!((best_pair.1 - plan.low_bid).abs() <= step + 1e-12);
    }

    #[test]
    fn gamma_and_f_b1_monotone_structure() {
        // with F(b1) fixed: error decreasing in gamma, cost and completion
        // increasing; with gamma fixed: completion decreasing and cost
        // increasing in F(b1)
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n1, n, j) = (2usize, 4usize, 50usize);
        let f1 = 0.6;
        let b1 = price.quantile(f1);
        let mut prev = (f64::INFINITY, 0.0, 0.0);
        for i in 1..=20 {
            let gamma = i as f64 / 20.0;
            let b2 = price.quantile(gamma * f1);
            let e = expected_inverse_active(b1, b2, n1, n, &price).unwrap();
            let err = convergence::error_bound(&k, &vec![e; j]).unwrap();
            let cost = expected_cost_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
            let tau = expected_completion_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
            assert!(err < prev.0 + 1e-12);
            assert!(cost > prev.1 - 1e-12);
            assert!(tau > prev.2 - 1e-12);
            prev = (err, cost, tau);
        }
        let gamma = 0.5;
        let mut prev_tau = f64::INFINITY;
        let mut prev_cost = 0.0;
        for i in 2..=20 {
            let f1 = i as f64 / 20.0;
            let b1 = price.quantile(f1);
            let b2 = price.quantile(gamma * f1);
            let tau = expected_completion_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
            let cost = expected_cost_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
            assert!(tau < prev_tau + 1e-12);
            assert!(cost > prev_cost - 1e-12);
            prev_tau = tau;
            prev_cost = cost;
        }
    }

    #[test]
    fn co_optimize_group_size_is_exhaustive_minimum() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n, j) = (4usize, 50usize);
        let eps = target_for_budget(&k, 0.375, j);
        let theta = 2.0 * j as f64 * (25.0 / 12.0);
        let req = JobRequirements { target_error: eps, deadline: theta };
        let best = co_optimize_group_size(&req, n, j, &k, &price, &rt).unwrap();
        for n1 in 1..=n {
            if let Ok(p) = optimal_two_bids(&req, n1, n, j, &k, &price, &rt) {
                assert!(best.expected_cost <= p.expected_cost + 1e-12);
            }
        }
        // brute force over (n1, b1, b2) agrees within grid resolution
        let grid = 80usize;
        let mut brute = f64::INFINITY;
        for n1 in 1..=n {
            for i in 0..=grid {
                let b1 = 0.2 + 0.8 * i as f64 / grid as f64;
                for l in 0..=i {
                    let b2 = 0.2 + 0.8 * l as f64 / grid as f64;
                    let Ok(e) = expected_inverse_active(b1, b2, n1, n, &price) else { continue };
                    if convergence::error_bound(&k, &vec![e; j]).unwrap() > eps * (1.0 + 1e-12) {
                        continue;
                    }
                    let c = expected_completion_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap();
                    if c > theta * (1.0 + 1e-12) {
                        continue;
                    }
                    brute = brute
                        .min(expected_cost_two_bids(j, n1, n, b1, b2, &price, &rt).unwrap());
                }
            }
        }
        assert!(best.expected_cost <= brute + best.expected_cost * 0.05);
    }

    #[test]
    fn co_optimize_iterations_scans_range() {
        let k = constants();
        let price = uniform_price();
        let rt = exp_runtime();
        let (n1, n) = (2usize, 4usize);
        let eps = target_for_budget(&k, 0.375, 50);
        let theta = 2.0 * 50.0 * (25.0 / 12.0);
        let req = JobRequirements { target_error: eps, deadline: theta };
        let best = co_optimize_iterations(&req, n1, n, &k, &price, &rt).unwrap();
        let (first, last) = feasible_two_bid_iterations(&k, eps, n1, n).unwrap();
        let deadline_cap = (theta / rt.expected_iteration_runtime(n).unwrap()).floor() as usize;
        let last = last.unwrap_or(deadline_cap).min(deadline_cap);
        for j in [first, last] {
            if let Ok(p) = optimal_two_bids(&req, n1, n, j, &k, &price, &rt) {
                assert!(best.expected_cost <= p.expected_cost + 1e-12);
            }
        }
        // returned J reproduces the minimal-iteration relation at its budget
        let e = expected_inverse_active(best.high_bid, best.low_bid, n1, n, &price).unwrap();
        let j_back = convergence::iterations_for_error(&k, eps, e).unwrap();
        assert!(best.iterations >= j_back.saturating_sub(1) && best.iterations <= j_back + 1);
    }
}
