//! Self-check suites runnable from the CLI: closed forms against the Monte
//! Carlo engine, bound identities, and optimizer optimality spot checks.
//! Each check carries its tolerance so failures are attributable.

use serde::{Deserialize, Serialize};

use crate::bid::{self, JobRequirements};
use crate::convergence::{self, SgdConstants};
use crate::error::{Error, Result};
use crate::math;
use crate::preemptible::{self, GrowthRuntime, WorkerSchedule};
use crate::price::{self, PriceModel};
use crate::runtime::RuntimeModel;
use crate::sim::{self, PriceMode, SimConfig, SimKnobs, SimPlan};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub passed: bool,
    pub tolerance: f64,
    pub observed: f64,
    pub expected: f64,
    pub detail: String,
}

impl CheckResult {
    fn relative(suite: &str, name: &str, observed: f64, expected: f64, tol: f64) -> Self {
        let err = if expected != 0.0 {
            ((observed - expected) / expected).abs()
        } else {
            observed.abs()
        };
        CheckResult {
            suite: suite.into(),
            name: name.into(),
            passed: err <= tol,
            tolerance: tol,
            observed,
            expected,
            detail: format!("relative error {err:.3e}"),
        }
    }

    fn absolute(suite: &str, name: &str, observed: f64, expected: f64, tol: f64) -> Self {
        let err = (observed - expected).abs();
        CheckResult {
            suite: suite.into(),
            name: name.into(),
            passed: err <= tol,
            tolerance: tol,
            observed,
            expected,
            detail: format!("absolute error {err:.3e}"),
        }
    }

    fn boolean(suite: &str, name: &str, passed: bool, detail: String) -> Self {
        CheckResult {
            suite: suite.into(),
            name: name.into(),
            passed,
            tolerance: 0.0,
            observed: if passed { 1.0 } else { 0.0 },
            expected: 1.0,
            detail,
        }
    }
}

fn reference_constants() -> SgdConstants {
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

/// Target error making the inverse-moment budget equal `q` at `iterations`.
fn target_for_budget(k: &SgdConstants, q: f64, iterations: usize) -> f64 {
    let beta = k.contraction();
    let bj = beta.powi(iterations as i32);
    bj * k.initial_gap + k.noise_coefficient() * q * (1.0 - bj) / (1.0 - beta)
}

/// Closed forms against the simulator on the reference setup (trimmed trial
/// counts so the suite runs in seconds; the acceptance suite runs the full
/// 1e5-trial versions).
pub fn suite_formulas(seed: u64) -> Result<Vec<CheckResult>> {
    const SUITE: &str = "formulas";
    let mut out = Vec::new();
    let price = price::make_uniform(0.2, 1.0)?;
    let rt = RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 };
    let (j, n, b) = (300usize, 4usize, 0.6);

    let config = SimConfig {
        plan: SimPlan::Bid {
            high_bid: b,
            low_bid: b,
            high_group: n,
            total_workers: n,
            iterations: j,
        },
        price: price.clone(),
        price_mode: PriceMode::IidRedraw,
        runtime: rt,
        knobs: SimKnobs { idle_slot_runtime: true, ..SimKnobs::default() },
        trials: 20_000,
        seed,
    };
    let outcome = sim::simulate(&config)?;
    out.push(CheckResult::relative(
        SUITE,
        "single-bid completion formula vs simulation",
        outcome.mean_completion,
        bid::expected_completion_uniform(j, n, b, &price, &rt)?,
        0.02,
    ));
    out.push(CheckResult::relative(
        SUITE,
        "single-bid cost formula vs simulation",
        outcome.mean_cost,
        bid::expected_cost_uniform(j, n, b, &price, &rt)?,
        0.02,
    ));

    let (b1, b2, n1) = (0.6, 0.4, 2usize);
    let config = SimConfig {
        plan: SimPlan::Bid {
            high_bid: b1,
            low_bid: b2,
            high_group: n1,
            total_workers: n,
            iterations: j,
        },
        price: price.clone(),
        price_mode: PriceMode::IidRedraw,
        runtime: rt,
        knobs: SimKnobs { idle_slot_runtime: true, ..SimKnobs::default() },
        trials: 20_000,
        seed: seed ^ 1,
    };
    let outcome = sim::simulate(&config)?;
    out.push(CheckResult::relative(
        SUITE,
        "two-bid completion formula vs simulation",
        outcome.mean_completion,
        bid::expected_completion_two_bids(j, n1, n, b1, b2, &price, &rt)?,
        0.02,
    ));
    out.push(CheckResult::relative(
        SUITE,
        "two-bid cost formula vs simulation",
        outcome.mean_cost,
        bid::expected_cost_two_bids(j, n1, n, b1, b2, &price, &rt)?,
        0.02,
    ));

    // preemption completion with deterministic runtime: exact inflation
    let det = RuntimeModel::Deterministic { time: 1.0, overhead: 0.0 };
    let config = SimConfig {
        plan: SimPlan::Preemptible {
            schedule: WorkerSchedule::Static { workers: 2, iterations: 50 },
            preempt_prob: 0.5,
            unit_price: 1.0,
        },
        price,
        price_mode: PriceMode::IidRedraw,
        runtime: det,
        knobs: SimKnobs { idle_slot_runtime: true, ..SimKnobs::default() },
        trials: 20_000,
        seed: seed ^ 2,
    };
    let outcome = sim::simulate(&config)?;
    out.push(CheckResult::relative(
        SUITE,
        "preemption completion formula vs simulation",
        outcome.mean_completion,
        crate::runtime::expected_completion_time_preemption(&det, 50, 2, 0.5, None)?,
        0.02,
    ));
    let seq = sim::empirical_inverse_moments(&outcome)?;
    let grand = math::pairwise_sum(seq.values()) / seq.len() as f64;
    out.push(CheckResult::absolute(
        SUITE,
        "empirical inverse moment vs binomial law",
        grand,
        preemptible::inverse_moment_binomial(2, 0.5)?,
        0.01,
    ));
    Ok(out)
}

/// Bound identities and moment formulas (pure numerics, no simulation).
pub fn suite_bounds() -> Result<Vec<CheckResult>> {
    const SUITE: &str = "bounds";
    let mut out = Vec::new();
    let k = reference_constants();

    // geometric closed form identity
    let (n, j) = (4.0, 50usize);
    let rec = convergence::error_bound(&k, &vec![1.0 / n; j])?;
    let beta = k.contraction();
    let closed = beta.powi(j as i32) + k.noise_floor(1.0 / n) * (1.0 - beta.powi(j as i32));
    out.push(CheckResult::absolute(
        SUITE,
        "bound recursion equals geometric closed form",
        rec,
        closed,
        1e-12,
    ));

    // budget round trip
    let eps = target_for_budget(&k, 0.375, j);
    let q = convergence::q_epsilon(&k, eps, j)?;
    let back = convergence::error_bound(&k, &vec![q; j])?;
    out.push(CheckResult::absolute(SUITE, "budget inverts the bound", back, eps, 1e-10));

    // iteration count is minimal
    let iters = convergence::iterations_for_error(&k, 0.35, 0.0)?;
    let at = convergence::error_bound(&k, &vec![0.0; iters])?;
    let before = convergence::error_bound(&k, &vec![0.0; iters - 1])?;
    out.push(CheckResult::boolean(
        SUITE,
        "iteration count minimality",
        at <= 0.35 && before > 0.35,
        format!("J = {iters}, bound(J) = {at:.4}, bound(J-1) = {before:.4}"),
    ));

    // geometric-schedule closed form equals the recursion
    let (n0, eta, chi, d, jp) = (2usize, 1.5, 1.0, 1.5, 40usize);
    let closed = preemptible::error_bound_dynamic(&k, n0, eta, chi, jp, d)?;
    let seq: Vec<f64> = (1..=jp)
        .map(|i| (d / (n0 as f64 * eta.powi(i as i32 - 1)).powf(chi)).min(1.0))
        .collect();
    let rec = convergence::error_bound(&k, &seq)?;
    out.push(CheckResult::absolute(
        SUITE,
        "dynamic-schedule bound equals recursion",
        closed,
        rec,
        1e-10,
    ));

    // binomial inverse moment vs direct enumeration, n <= 20
    let mut worst = 0.0f64;
    for n in 1..=20usize {
        for i in 1..=9 {
            let q = i as f64 / 10.0;
            let p = 1.0 - q;
            let mut row = vec![1.0f64];
            for _ in 0..n {
                let mut next = vec![1.0];
                for w in row.windows(2) {
                    next.push(w[0] + w[1]);
                }
                next.push(1.0);
                row = next;
            }
            let mut sum = 0.0;
            for y in 1..=n {
                sum += row[y] * p.powi(y as i32) * q.powi((n - y) as i32) / y as f64;
            }
            let oracle = sum / (1.0 - q.powi(n as i32));
            worst = worst.max((preemptible::inverse_moment_binomial(n, q)? - oracle).abs());
        }
    }
    out.push(CheckResult::absolute(
        SUITE,
        "binomial inverse moment vs enumeration (n <= 20)",
        worst,
        0.0,
        1e-12,
    ));

    // uniform-law cap H_n/n <= (ln n + 1)/n up to 1e4
    let mut ok = true;
    for n in 1..=10_000usize {
        if preemptible::inverse_moment_uniform(n)? > ((n as f64).ln() + 1.0) / n as f64 + 1e-15 {
            ok = false;
            break;
        }
    }
    out.push(CheckResult::boolean(
        SUITE,
        "uniform-law inverse moment cap",
        ok,
        "H_n/n <= (ln n + 1)/n for n <= 1e4".into(),
    ));

    // Jensen penalty
    let jensen = convergence::jensen_penalty_check(&[(1, 0.5), (9, 0.5)])?
        && convergence::jensen_penalty_check(&[(4, 1.0)])?;
    out.push(CheckResult::boolean(
        SUITE,
        "expected reciprocal dominates reciprocal mean",
        jensen,
        "checked degenerate and two-point laws".into(),
    ));
    Ok(out)
}

/// Optimizer optimality spot checks against grid and brute-force oracles.
pub fn suite_optimizers() -> Result<Vec<CheckResult>> {
    const SUITE: &str = "optimizers";
    let mut out = Vec::new();
    let k = reference_constants();
    let price = price::make_uniform(0.2, 1.0)?;
    let rt = RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 };

    // single-bid optimum vs a 500-point bid grid
    let n = 4usize;
    let req = JobRequirements { target_error: 0.05, deadline: 400.0 };
    let plan = bid::optimal_uniform_bid(&req, n, &k, &price, &rt)?;
    let mut best_grid = f64::INFINITY;
    for i in 1..=500 {
        let b = 0.2 + 0.8 * i as f64 / 500.0;
        let Ok(c) = bid::expected_completion_uniform(plan.iterations, n, b, &price, &rt) else {
            continue;
        };
        if c > req.deadline * (1.0 + 1e-12) {
            continue;
        }
        best_grid = best_grid.min(bid::expected_cost_uniform(plan.iterations, n, b, &price, &rt)?);
    }
    out.push(CheckResult::boolean(
        SUITE,
        "single-bid optimum beats 500-bid grid",
        plan.expected_cost <= best_grid + 1e-9,
        format!("optimum {:.4} vs grid best {best_grid:.4}", plan.expected_cost),
    ));

    // two-bid worked instance
    let (n1, j) = (2usize, 50usize);
    let eps = target_for_budget(&k, 0.375, j);
    let theta = 2.0 * j as f64 * ((25.0 / 12.0 - 1.5) * 0.5 + 1.5);
    let req = JobRequirements { target_error: eps, deadline: theta };
    let plan = bid::optimal_two_bids(&req, n1, n, j, &k, &price, &rt)?;
    out.push(CheckResult::absolute(SUITE, "two-bid high bid at worked value", plan.high_bid, 0.6, 1e-9));
    out.push(CheckResult::absolute(SUITE, "two-bid low bid at worked value", plan.low_bid, 0.4, 1e-9));
    out.push(CheckResult::relative(
        SUITE,
        "two-bid deadline tight",
        plan.expected_completion,
        theta,
        1e-9,
    ));
    out.push(CheckResult::relative(
        SUITE,
        "two-bid error tight",
        plan.expected_error,
        eps,
        1e-9,
    ));

    // Theorem-style joint worker/iteration sizing vs brute force
    let point = preemptible::co_optimize_workers_iterations(&k, 0.2, 300.0, 1.0, 10.0)?;
    let beta = k.contraction();
    let mut brute: Option<(usize, usize, usize)> = None;
    for jj in 1..=300usize {
        let bj = beta.powi(jj as i32);
        for nn in 1..=200usize {
            if bj + 0.05 * (1.0 - bj) / (nn as f64 * 0.1) <= 0.2 {
                let obj = nn * jj;
                if brute.map_or(true, |(bo, _, _)| obj < bo) {
                    brute = Some((obj, nn, jj));
                }
                break;
            }
        }
    }
    let (bobj, bn, bj_) = brute.unwrap();
    out.push(CheckResult::boolean(
        SUITE,
        "worker/iteration sizing matches brute force",
        point.workers * point.iterations == bobj,
        format!(
            "returned ({}, {}) objective {}, brute force ({bn}, {bj_}) objective {bobj}",
            point.workers,
            point.iterations,
            point.workers * point.iterations
        ),
    ));
    out.push(CheckResult::absolute(
        SUITE,
        "stationary-point bisection residual",
        point.bisection_residual,
        0.0,
        1e-10,
    ));

    // growth-rate search vs a dense grid
    let rtc = GrowthRuntime::Constant { seconds: 1.0 };
    let (n0, q, chi, jg, d) = (1usize, 0.5, 1.0, 50usize, 1.0);
    let (deadline, eps_g, cap) = (120.0, 0.0055, 4.0);
    let sol = preemptible::optimize_eta(&k, n0, q, chi, jg, &rtc, deadline, eps_g, d, cap)?;
    let lo = (1.0f64 / beta).powf(1.0 / chi) * (1.0 + 1e-9);
    let points = 20_000usize;
    let mut best_eta = f64::NAN;
    let mut best_obj = f64::INFINITY;
    for i in 0..=points {
        let eta = lo + (cap - lo) * i as f64 / points as f64;
        if preemptible::error_bound_dynamic(&k, n0, eta, chi, jg, d)? > eps_g {
            continue;
        }
        if preemptible::growth_completion_time(&rtc, n0, eta, q, jg) > deadline {
            continue;
        }
        let obj = preemptible::geometric_series_total(eta, jg);
        if obj < best_obj {
            best_obj = obj;
            best_eta = eta;
        }
    }
    let step = (cap - lo) / points as f64;
    out.push(CheckResult::absolute(
        SUITE,
        "growth rate search matches grid",
        sol.eta,
        best_eta,
        step + 1e-6,
    ));
    Ok(out)
}

/// Run the named suite (`formulas`, `bounds`, `optimizers`, or `all`).
pub fn run_suite(name: &str, seed: u64) -> Result<Vec<CheckResult>> {
    match name {
        "formulas" => suite_formulas(seed),
        "bounds" => suite_bounds(),
        "optimizers" => suite_optimizers(),
        "all" => {
            let mut all = suite_formulas(seed)?;
            all.extend(suite_bounds()?);
            all.extend(suite_optimizers()?);
            Ok(all)
        }
        other => Err(Error::InvalidParameter(format!(
            "unknown suite `{other}` (expected formulas, bounds, optimizers, or all)"
        ))),
    }
}

/// Render results as a CSV table (`suite,name,passed,tolerance,observed,expected,detail`).
pub fn results_csv(results: &[CheckResult]) -> String {
    let mut out = String::from("suite,name,passed,tolerance,observed,expected,detail\n");
    for r in results {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.suite,
            r.name.replace(',', ";"),
            r.passed,
            r.tolerance,
            r.observed,
            r.expected,
            r.detail.replace(',', ";")
        ));
    }
    out
}
