//! Provisioning optimization when preemption is not controllable by bidding:
//! exact inverse moments of the active-worker count under uniform and
//! binomial preemption laws, joint sizing of the worker pool and iteration
//! count, and the geometric worker-growth schedule with its rate optimizer.

use serde::{Deserialize, Serialize};

use crate::convergence::SgdConstants;
use crate::error::{Error, Result};
use crate::math;

/// How the active-worker count relates to the provisioned count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PreemptionKind {
    /// Active count uniform on {1, .., n}.
    UniformActive,
    /// Each provisioned worker independently preempted with probability `q`
    /// per iteration; iterations condition on at least one survivor.
    Binomial { preempt_prob: f64 },
}

/// A preemption law together with a fitted power-law cap on the inverse
/// moment: `E[1/y] <= coeff / n^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreemptionLaw {
    pub kind: PreemptionKind,
    /// Power-law exponent chi (> 0).
    pub exponent: f64,
    /// Power-law coefficient d (> 0).
    pub coeff: f64,
}

impl PreemptionKind {
    /// Exact inverse moment E[1/y] (conditioned on y > 0 for the binomial).
    pub fn inverse_moment(&self, n: usize) -> Result<f64> {
        match *self {
            PreemptionKind::UniformActive => inverse_moment_uniform(n),
            PreemptionKind::Binomial { preempt_prob } => inverse_moment_binomial(n, preempt_prob),
        }
    }

    /// Default power-law exponent: 1/2 for the uniform law, 1 for binomial.
    pub fn default_exponent(&self) -> f64 {
        match self {
            PreemptionKind::UniformActive => 0.5,
            PreemptionKind::Binomial { .. } => 1.0,
        }
    }

    /// Fit the smallest coefficient `d` such that `E[1/y] <= d / n^chi` holds
    /// on n in 1..=128, for a caller-chosen exponent.
    pub fn fit_bound(&self, exponent: f64) -> Result<PreemptionLaw> {
        if !(exponent > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "exponent must be positive, got {exponent}"
            )));
        }
        let mut coeff: f64 = 0.0;
        for n in 1..=128usize {
            coeff = coeff.max(self.inverse_moment(n)? * (n as f64).powf(exponent));
        }
        Ok(PreemptionLaw {
            kind: *self,
            exponent,
            coeff,
        })
    }
}

/// E[1/y] when the active count is uniform on {1, .., n}: exactly H_n / n.
pub fn inverse_moment_uniform(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("worker count must be >= 1".into()));
    }
    Ok(math::harmonic(n) / n as f64)
}

/// E[1/y | y > 0] for y ~ Binomial(n, 1 - q):
/// `sum_k (1/k) C(n,k) (1-q)^k q^(n-k) / (1 - q^n)`, evaluated with
/// log-space binomial coefficients so n up to 1e4 stays stable.
pub fn inverse_moment_binomial(n: usize, q: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("worker count must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "preemption probability {q} outside [0, 1)"
        )));
    }
    if q == 0.0 {
        return Ok(1.0 / n as f64);
    }
    let ln_q = q.ln();
    let ln_p = (1.0 - q).ln();
    let mut ln_choose = 0.0f64;
    let mut sum = 0.0f64;
    for k in 1..=n {
        ln_choose += ((n - k + 1) as f64 / k as f64).ln();
        let term = (ln_choose + k as f64 * ln_p + (n - k) as f64 * ln_q).exp() / k as f64;
        sum += term;
    }
    let none_active = (n as f64 * ln_q).exp();
    Ok(sum / (1.0 - none_active))
}

/// Closed-form companion E[1/(y + 1)] for the unconditioned binomial count:
/// `(1 - q^(n+1)) / ((n + 1)(1 - q))`.
pub fn inverse_moment_binomial_shifted(n: usize, q: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::InvalidParameter("worker count must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "preemption probability {q} outside [0, 1)"
        )));
    }
    let n1 = (n + 1) as f64;
    Ok((1.0 - q.powf(n1)) / (n1 * (1.0 - q)))
}

/// Conditional mean active count E[y | y > 0] = n(1-q)/(1-q^n) for the
/// binomial law; used as the default effective worker count in completion
/// estimates.
pub fn binomial_conditional_mean(n: usize, q: f64) -> f64 {
    let nf = n as f64;
    if q == 0.0 {
        return nf;
    }
    nf * (1.0 - q) / (1.0 - q.powf(nf))
}

/// Iterations-per-second budget helper for the deterministic-runtime model:
/// with per-iteration runtime `r` and idle probability `q^n`, about
/// `(1 - q^n)/r` iterations complete per second.
pub fn iterations_per_second(q: f64, n: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter("runtime must be positive".into()));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "preemption probability {q} outside [0, 1)"
        )));
    }
    Ok((1.0 - q.powf(n as f64)) / r)
}

/// Joint worker/iteration sizing result. `workers`/`iterations` is the
/// integer-exact minimizer of n * J under the error constraint; the
/// `formula_*` pair is the closed-form rounding (which can differ once the
/// ceiling on n bites), both reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProvisionPoint {
    pub workers: usize,
    pub iterations: usize,
    pub formula_workers: usize,
    pub formula_iterations: usize,
    /// The fractional stationary point of the continuous relaxation.
    pub fractional_iterations: f64,
    /// |H(J~) - eps| at the bisection result.
    pub bisection_residual: f64,
}

/// Error-constraint left-hand side A beta^J + B (1 - beta^J) / (n (1 - beta)).
fn static_error_bound(a: f64, b: f64, beta: f64, n: f64, iterations: usize) -> f64 {
    let bj = beta.powi(iterations as i32);
    a * bj + b * (1.0 - bj) / (n * (1.0 - beta))
}

/// Jointly choose the provisioned worker count and iteration count that
/// minimize total worker-iterations `n * J` subject to the error constraint
/// `A beta^J + B(1 - beta^J)/(n(1-beta)) <= eps` and the completion cap
/// `J <= theta * delta`, for deterministic per-iteration runtime and a
/// binomial-style inverse-moment cap `E[1/y] <= d/n`.
///
/// `A = G0`, `B = alpha^2 L M d / 2`, `beta = 1 - alpha c mu`. The fractional
/// stationary point solves `H(J~) = eps` by bisection on the strictly
/// decreasing `H`.
pub fn co_optimize_workers_iterations(
    k: &SgdConstants,
    target_error: f64,
    deadline: f64,
    iter_rate: f64,
    coeff: f64,
) -> Result<ProvisionPoint> {
    k.validate()?;
    if !(coeff > 0.0) {
        return Err(Error::InvalidParameter("coefficient d must be positive".into()));
    }
    if !(deadline > 0.0 && iter_rate > 0.0) {
        return Err(Error::InvalidParameter(
            "deadline and iteration rate must be positive".into(),
        ));
    }
    let a = k.initial_gap;
    let b = k.noise_coefficient() * coeff;
    let beta = k.contraction();
    if !(target_error > 0.0 && target_error < a) {
        return Err(Error::InvalidParameter(format!(
            "target {target_error} must lie in (0, initial gap {a})"
        )));
    }
    let cap = (deadline * iter_rate).floor() as usize;
    if cap < 1 {
        return Err(Error::Infeasible(
            "completion budget admits no iterations".into(),
        ));
    }

    // H(J) = A beta^J (J ln(1/beta) + 1 - beta^J) / (1 + beta^J (J ln(1/beta) - 1)),
    // strictly decreasing from A to 0.
    let ln_inv = (1.0 / beta).ln();
    let h = |j: f64| {
        let bj = beta.powf(j);
        a * bj * (j * ln_inv + 1.0 - bj) / (1.0 + bj * (j * ln_inv - 1.0))
    };
    let mut lo = 1e-9;
    let mut hi = 1.0;
    while h(hi) > target_error {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Infeasible("stationary point out of range".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > target_error {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let j_frac = 0.5 * (lo + hi);
    let residual = (h(j_frac) - target_error).abs();

    // continuous n at a given J, defined where A beta^J < eps
    let n_cont = |j: f64| {
        let bj = beta.powf(j);
        b * (1.0 - bj) / ((1.0 - beta) * (target_error - a * bj))
    };
    // smallest J with A beta^J < eps strictly
    let mut j_min = ((target_error / a).ln() / beta.ln()).ceil().max(1.0) as usize;
    while a * beta.powi(j_min as i32) >= target_error {
        j_min += 1;
    }
    if j_min > cap {
        return Err(Error::Infeasible(format!(
            "even {cap} iterations cannot bring the decayed gap under {target_error}"
        )));
    }

    // theorem-verbatim rounding of the continuous solution
    let cont_obj = |j: usize| {
        if j < j_min {
            f64::INFINITY
        } else {
            j as f64 * n_cont(j as f64)
        }
    };
    let (fl, ce) = (j_frac.floor().max(1.0) as usize, j_frac.ceil() as usize);
    let formula_iterations = if cont_obj(fl) <= cont_obj(ce) { fl } else { ce }.min(cap);
    let formula_workers = n_cont(j_frac).ceil().max(1.0) as usize;

    // integer-exact scan: smallest feasible n per J, minimize n * J
    let n_floor = (b / ((1.0 - beta) * target_error)).max(1e-300);
    let mut best: Option<(usize, usize, usize)> = None; // (n * J, n, J)
    for j in j_min..=cap {
        if let Some((obj, _, _)) = best {
            // n(J) can only get as small as the asymptotic floor
            if (j as f64) * n_floor.floor().max(1.0) > obj as f64 {
                break;
            }
        }
        let n = n_cont(j as f64).ceil().max(1.0) as usize;
        debug_assert!(static_error_bound(a, b, beta, n as f64, j) <= target_error * (1.0 + 1e-9));
        let obj = n * j;
        let better = match best {
            None => true,
            Some((bo, bn, bj_)) => obj < bo || (obj == bo && (j, n) < (bj_, bn)),
        };
        if better {
            best = Some((obj, n, j));
        }
    }
    let (_, workers, iterations) =
        best.ok_or_else(|| Error::Infeasible("no feasible worker/iteration pair".into()))?;
    Ok(ProvisionPoint {
        workers,
        iterations,
        formula_workers,
        formula_iterations,
        fractional_iterations: j_frac,
        bisection_residual: residual,
    })
}

/// Iterations the geometric schedule needs to match the J-iteration static
/// bound: `ceil(log_{eta^chi}(1 + (eta - 1) J))`.
pub fn dynamic_iteration_count(iterations: usize, eta: f64, chi: f64) -> Result<usize> {
    if iterations < 1 {
        return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
    }
    if !(eta > 1.0) || !(chi > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need eta > 1 and chi > 0, got {eta}, {chi}"
        )));
    }
    let raw = (1.0 + (eta - 1.0) * iterations as f64).ln() / (chi * eta.ln());
    Ok(raw.ceil().max(1.0) as usize)
}

/// Closed-form error bound for the geometric schedule n_j = n0 eta^(j-1) run
/// for `iterations` steps:
/// `A beta^J' + (B / n0^chi) beta^(J'-1) (1 - x^J')/(1 - x)` with
/// `x = 1/(eta^chi beta)`; at x = 1 the sum collapses to `J' beta^(J'-1)`.
pub fn error_bound_dynamic(
    k: &SgdConstants,
    n0: usize,
    eta: f64,
    chi: f64,
    iterations: usize,
    coeff: f64,
) -> Result<f64> {
    k.validate()?;
    if n0 < 1 {
        return Err(Error::InvalidParameter("initial workers must be >= 1".into()));
    }
    if !(eta >= 1.0 && chi > 0.0 && coeff > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need eta >= 1, chi > 0, d > 0; got {eta}, {chi}, {coeff}"
        )));
    }
    let a = k.initial_gap;
    let b = k.noise_coefficient() * coeff;
    let beta = k.contraction();
    let jf = iterations as i32;
    let x = 1.0 / (eta.powf(chi) * beta);
    let series = if (1.0 - x).abs() < 1e-12 {
        iterations as f64
    } else {
        (1.0 - x.powi(jf)) / (1.0 - x)
    };
    Ok(a * beta.powi(jf) + b / (n0 as f64).powf(chi) * beta.powi(jf - 1) * series)
}

/// Comparison of the geometric schedule against the static baseline at
/// matched error budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicStaticReport {
    pub static_iterations: usize,
    pub dynamic_iterations: usize,
    pub static_bound: f64,
    pub dynamic_bound: f64,
    /// Limit of the static bound as iterations grow: B / ((1 - beta) n0^chi).
    pub static_asymptote: f64,
    /// Smallest static iteration count from which the dynamic schedule's
    /// bound stays at or below the static bound (located numerically).
    pub threshold_iterations: usize,
    /// Whether the requested iteration count is at or past the threshold.
    pub holds: bool,
}

/// Evaluate the dynamic-vs-static bound comparison at `iterations` static
/// steps, locating the crossover threshold numerically on a horizon.
pub fn compare_dynamic_static(
    k: &SgdConstants,
    n0: usize,
    eta: f64,
    chi: f64,
    iterations: usize,
    coeff: f64,
) -> Result<DynamicStaticReport> {
    let beta = k.contraction();
    if !(eta.powf(chi) > 1.0 / beta) {
        return Err(Error::InvalidParameter(format!(
            "growth too slow: eta^chi = {} must exceed 1/beta = {}",
            eta.powf(chi),
            1.0 / beta
        )));
    }
    let b = k.noise_coefficient() * coeff;
    let n0f = n0 as f64;
    let static_at = |j: usize| static_error_bound(k.initial_gap, b, beta, n0f.powf(chi), j);
    let dynamic_at = |j: usize| -> Result<f64> {
        let jp = dynamic_iteration_count(j, eta, chi)?;
        error_bound_dynamic(k, n0, eta, chi, jp, coeff)
    };
    let horizon = iterations.max(1000);
    let mut last_violation = 0usize;
    for j in 1..=horizon {
        if dynamic_at(j)? > static_at(j) * (1.0 + 1e-12) {
            last_violation = j;
        }
    }
    let threshold = last_violation + 1;
    let jp = dynamic_iteration_count(iterations, eta, chi)?;
    Ok(DynamicStaticReport {
        static_iterations: iterations,
        dynamic_iterations: jp,
        static_bound: static_at(iterations),
        dynamic_bound: error_bound_dynamic(k, n0, eta, chi, jp, coeff)?,
        static_asymptote: b / ((1.0 - beta) * n0f.powf(chi)),
        threshold_iterations: threshold,
        holds: iterations >= threshold,
    })
}

/// Per-iteration runtime entering the completion constraint of the growth
/// optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GrowthRuntime {
    /// Constant per-iteration runtime (no straggler effect).
    Constant { seconds: f64 },
    /// Straggler-aware log-approximation: R_j = (log n0 + (j-1) log eta)/rate.
    Straggler { rate: f64 },
}

impl GrowthRuntime {
    fn iteration_runtime(&self, n0: usize, eta: f64, j: usize) -> f64 {
        match *self {
            GrowthRuntime::Constant { seconds } => seconds,
            GrowthRuntime::Straggler { rate } => {
                ((n0 as f64).ln() + (j as f64 - 1.0) * eta.ln()) / rate
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            GrowthRuntime::Constant { seconds } => seconds > 0.0,
            GrowthRuntime::Straggler { rate } => rate > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid growth runtime {self:?}")))
        }
    }
}

/// Geometric-sum objective of the growth program: total provisioned
/// worker-iterations per initial worker, `(1 - eta^J)/(1 - eta)`
/// (continuity: equals J at eta = 1).
pub fn geometric_series_total(eta: f64, iterations: usize) -> f64 {
    if (eta - 1.0).abs() < 1e-12 {
        return iterations as f64;
    }
    (1.0 - eta.powi(iterations as i32)) / (1.0 - eta)
}

/// Completion-constraint left-hand side:
/// `sum_{j=1}^{J} R_j / (1 - q^(n0 eta^j))`, with the idle probability
/// computed in log space (treated as zero below 1e-300).
pub fn growth_completion_time(
    rt: &GrowthRuntime,
    n0: usize,
    eta: f64,
    q: f64,
    iterations: usize,
) -> f64 {
    let ln_q = if q > 0.0 { q.ln() } else { f64::NEG_INFINITY };
    let mut total = 0.0;
    for j in 1..=iterations {
        let idle_prob = if q == 0.0 {
            0.0
        } else {
            let exponent = n0 as f64 * eta.powi(j as i32);
            let lp = exponent * ln_q;
            if lp < -690.0 {
                0.0 // below 1e-300
            } else {
                lp.exp()
            }
        };
        total += rt.iteration_runtime(n0, eta, j) / (1.0 - idle_prob);
    }
    total
}

/// Solution of the growth-rate program at a fixed iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthSolution {
    pub eta: f64,
    pub iterations: usize,
    /// Objective value (provisioned worker-iterations per initial worker).
    pub total_provisioning: f64,
    pub completion: f64,
    pub error_bound: f64,
}

const ETA_TOL: f64 = 1e-8;

/// Optimize the geometric growth rate `eta` for a fixed iteration count:
/// minimize the provisioning objective subject to the completion deadline,
/// the error budget, and `eta^chi > 1/beta`. Both constraints are convex in
/// `eta`; feasibility edges are located by bisection and the objective is
/// then minimized by golden-section search to 1e-8 on `eta`.
#[allow(clippy::too_many_arguments)]
pub fn optimize_eta(
    k: &SgdConstants,
    n0: usize,
    q: f64,
    chi: f64,
    iterations: usize,
    rt: &GrowthRuntime,
    deadline: f64,
    target_error: f64,
    coeff: f64,
    eta_cap: f64,
) -> Result<GrowthSolution> {
    k.validate()?;
    rt.validate()?;
    if n0 < 1 || iterations < 1 {
        return Err(Error::InvalidParameter(
            "need at least one worker and one iteration".into(),
        ));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "preemption probability {q} outside [0, 1)"
        )));
    }
    let beta = k.contraction();
    let eta_floor = (1.0 / beta).powf(1.0 / chi);
    if !(eta_cap > eta_floor) {
        return Err(Error::Infeasible(format!(
            "search cap {eta_cap} at or below the growth floor {eta_floor}"
        )));
    }
    let lo = eta_floor * (1.0 + 1e-9);

    // error constraint: decreasing in eta
    let err_at = |eta: f64| error_bound_dynamic(k, n0, eta, chi, iterations, coeff).unwrap();
    if err_at(eta_cap) > target_error {
        return Err(Error::Infeasible(format!(
            "error bound {} at the search cap still exceeds target {target_error}",
            err_at(eta_cap)
        )));
    }
    let eta_err = math::bisect_lowest_true(|eta| err_at(eta) <= target_error, lo, eta_cap, ETA_TOL);

    // completion constraint: convex in eta; locate its minimum then both edges
    let time_at = |eta: f64| growth_completion_time(rt, n0, eta, q, iterations);
    let (eta_tmin, tmin) = math::golden_section_min(&time_at, lo, eta_cap, ETA_TOL);
    if tmin > deadline {
        return Err(Error::Infeasible(format!(
            "completion {tmin} exceeds deadline {deadline} for every admissible growth rate"
        )));
    }
    let left_edge = if time_at(lo) <= deadline {
        lo
    } else {
        math::bisect_lowest_true(|eta| time_at(eta) <= deadline, lo, eta_tmin, ETA_TOL)
    };
    let right_edge = if time_at(eta_cap) <= deadline {
        eta_cap
    } else {
        // decreasing feasibility on the right branch: flip coordinates
        let flipped = math::bisect_lowest_true(
            |t| time_at(eta_cap + eta_tmin - t) <= deadline,
            eta_tmin,
            eta_cap,
            ETA_TOL,
        );
        eta_cap + eta_tmin - flipped
    };

    let lo_feas = eta_err.max(left_edge);
    let hi_feas = right_edge;
    if lo_feas > hi_feas {
        return Err(Error::Infeasible(
            "error and completion constraints admit no common growth rate".into(),
        ));
    }
    let (eta_star, obj) =
        math::golden_section_min(|eta| geometric_series_total(eta, iterations), lo_feas, hi_feas, ETA_TOL);
    Ok(GrowthSolution {
        eta: eta_star,
        iterations,
        total_provisioning: obj,
        completion: time_at(eta_star),
        error_bound: err_at(eta_star),
    })
}

/// Joint variant: scan iteration counts upward while the completion
/// constraint stays satisfiable, optimizing `eta` per count, and return the
/// (J, eta) pair of minimal provisioning objective (ties to the smaller J).
#[allow(clippy::too_many_arguments)]
pub fn optimize_eta_joint(
    k: &SgdConstants,
    n0: usize,
    q: f64,
    chi: f64,
    rt: &GrowthRuntime,
    deadline: f64,
    target_error: f64,
    coeff: f64,
    eta_cap: f64,
) -> Result<GrowthSolution> {
    let beta = k.contraction();
    let eta_floor = (1.0 / beta).powf(1.0 / chi);
    let lo = eta_floor * (1.0 + 1e-9);
    let mut best: Option<GrowthSolution> = None;
    for iterations in 1..=1_000_000usize {
        // completion feasibility is monotone in J: stop once even the best
        // eta cannot meet the deadline
        let time_at = |eta: f64| growth_completion_time(rt, n0, eta, q, iterations);
        let (_, tmin) = math::golden_section_min(&time_at, lo, eta_cap, ETA_TOL);
        if tmin > deadline {
            break;
        }
        match optimize_eta(k, n0, q, chi, iterations, rt, deadline, target_error, coeff, eta_cap) {
            Ok(sol) => {
                let better = match &best {
                    None => true,
                    Some(b) => sol.total_provisioning < b.total_provisioning,
                };
                if better {
                    best = Some(sol);
                }
            }
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::Infeasible("no feasible (iterations, eta) pair".into()))
}

/// A provisioning schedule: static `n` per iteration or geometric growth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorkerSchedule {
    Static { workers: usize, iterations: usize },
    Geometric { initial_workers: usize, growth: f64, iterations: usize },
}

impl WorkerSchedule {
    /// Provisioned workers per iteration.
    pub fn provisioned(&self) -> Vec<usize> {
        match *self {
            WorkerSchedule::Static { workers, iterations } => vec![workers; iterations],
            WorkerSchedule::Geometric { initial_workers, growth, iterations } => (1..=iterations)
                .map(|j| (initial_workers as f64 * growth.powi(j as i32 - 1)).ceil() as usize)
                .collect(),
        }
    }

    /// Structural validity; geometric schedules must out-grow the contraction
    /// (`growth^chi > 1/beta`).
    pub fn validate(&self, beta: f64, chi: f64) -> Result<()> {
        match *self {
            WorkerSchedule::Static { workers, iterations } => {
                if workers < 1 || iterations < 1 {
                    return Err(Error::InvalidParameter("empty schedule".into()));
                }
            }
            WorkerSchedule::Geometric { initial_workers, growth, iterations } => {
                if initial_workers < 1 || iterations < 1 {
                    return Err(Error::InvalidParameter("empty schedule".into()));
                }
                if !(growth > 1.0) || !(growth.powf(chi) > 1.0 / beta) {
                    return Err(Error::InvalidParameter(format!(
                        "growth {growth} too slow for beta {beta}, chi {chi}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Serializable provisioning plan emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvisionPlan {
    pub initial_workers: usize,
    pub growth: f64,
    pub iterations: usize,
    /// Provisioned counts, truncated to the first and last ten entries.
    pub schedule_head: Vec<usize>,
    pub schedule_tail: Vec<usize>,
    /// Provisioned worker-iterations (the cost proxy the program minimizes).
    pub predicted_cost_proxy: f64,
    pub predicted_completion: f64,
    pub predicted_error_bound: f64,
}

impl ProvisionPlan {
    pub fn from_solution(sol: &GrowthSolution, n0: usize) -> Self {
        let schedule = WorkerSchedule::Geometric {
            initial_workers: n0,
            growth: sol.eta,
            iterations: sol.iterations,
        }
        .provisioned();
        let head: Vec<usize> = schedule.iter().copied().take(10).collect();
        let tail: Vec<usize> = if schedule.len() > 10 {
            schedule[schedule.len().saturating_sub(10)..].to_vec()
        } else {
            Vec::new()
        };
        ProvisionPlan {
            initial_workers: n0,
            growth: sol.eta,
            iterations: sol.iterations,
            schedule_head: head,
            schedule_tail: tail,
            predicted_cost_proxy: n0 as f64 * sol.total_provisioning,
            predicted_completion: sol.completion,
            predicted_error_bound: sol.error_bound,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convergence;

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

    /// Enumeration oracle for the binomial inverse moment: exact f64
    /// binomials via Pascal recurrence, no logs.
    fn binomial_inverse_moment_oracle(n: usize, q: f64) -> f64 {
        let p = 1.0 - q;
        // row of binomial coefficients
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
        for k in 1..=n {
            sum += row[k] * p.powi(k as i32) * q.powi((n - k) as i32) / k as f64;
        }
        sum / (1.0 - q.powi(n as i32))
    }

    #[test]
    fn uniform_inverse_moment_values() {
        assert_eq!(inverse_moment_uniform(1).unwrap(), 1.0);
        assert!((inverse_moment_uniform(2).unwrap() - 0.75).abs() < 1e-15);
        // H_n/n <= (ln n + 1)/n on a grid up to 1e4
        for n in [1usize, 2, 7, 100, 5000, 10_000] {
            let v = inverse_moment_uniform(n).unwrap();
            assert!(v <= ((n as f64).ln() + 1.0) / n as f64 + 1e-15, "n={n}");
        }
    }

    #[test]
    fn binomial_inverse_moment_examples() {
        assert!((inverse_moment_binomial(4, 0.0).unwrap() - 0.25).abs() < 1e-15);
        // n=2, q=0.5: P(1|y>0) = 2/3, P(2|y>0) = 1/3 -> 5/6
        let v = inverse_moment_binomial(2, 0.5).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn binomial_matches_enumeration_oracle() {
        for n in 1..=20 {
            for i in 1..=9 {
                let q = i as f64 / 10.0;
                let got = inverse_moment_binomial(n, q).unwrap();
                let want = binomial_inverse_moment_oracle(n, q);
                assert!((got - want).abs() < 1e-12, "n={n} q={q}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn shifted_closed_form_matches_enumeration() {
        for n in 1..=20 {
            for i in 1..=9 {
                let q = i as f64 / 10.0;
                let p = 1.0 - q;
                // direct enumeration of E[1/(y+1)] over the full binomial
                let mut row = vec![1.0f64];
                for _ in 0..n {
                    let mut next = vec![1.0];
                    for w in row.windows(2) {
                        next.push(w[0] + w[1]);
                    }
                    next.push(1.0);
                    row = next;
                }
                let mut want = 0.0;
                for k in 0..=n {
                    want += row[k] * p.powi(k as i32) * q.powi((n - k) as i32) / (k + 1) as f64;
                }
                let got = inverse_moment_binomial_shifted(n, q).unwrap();
                assert!((got - want).abs() < 1e-12, "n={n} q={q}");
            }
        }
    }

    #[test]
    fn inverse_moments_monotone() {
        for q in [0.1, 0.5, 0.9] {
            let mut prev = f64::INFINITY;
            for n in 1..=50 {
                let v = inverse_moment_binomial(n, q).unwrap();
                assert!(v < prev, "not decreasing in n at n={n}, q={q}");
                prev = v;
            }
        }
        let mut prev = 0.0;
        for i in 0..10 {
            let q = i as f64 / 10.0;
            let v = inverse_moment_binomial(8, q).unwrap();
            assert!(v > prev || i == 0, "not increasing in q at q={q}");
            prev = v;
        }
        let mut prev = f64::INFINITY;
        for n in 1..=50 {
            let v = inverse_moment_uniform(n).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn fitted_bound_caps_exact_moments() {
        for kind in [
            PreemptionKind::UniformActive,
            PreemptionKind::Binomial { preempt_prob: 0.3 },
            PreemptionKind::Binomial { preempt_prob: 0.7 },
        ] {
            let law = kind.fit_bound(kind.default_exponent()).unwrap();
            for n in 1..=1000usize {
                let exact = kind.inverse_moment(n).unwrap();
                let cap = law.coeff / (n as f64).powf(law.exponent);
                assert!(exact <= cap * (1.0 + 1e-12), "{kind:?} n={n}");
            }
        }
    }

    #[test]
    fn theorem4_bisection_and_brute_force() {
        // instance: A=1, beta=0.9, B=0.05 (d=10 here), eps=0.2, theta*delta=300
        let k = constants();
        let d = 10.0; // B = 0.005 * 10 = 0.05
        let point = co_optimize_workers_iterations(&k, 0.2, 300.0, 1.0, d).unwrap();
        assert!(point.bisection_residual < 1e-10);
        assert!((point.fractional_iterations - 26.9195).abs() < 1e-3);
        // frozen from the brute-force oracle
        assert_eq!((point.workers, point.iterations), (3, 31));
        assert_eq!((point.formula_workers, point.formula_iterations), (4, 27));
        // H strictly decreasing on a grid
        let beta: f64 = 0.9;
        let ln_inv = (1.0f64 / beta).ln();
        let h = |j: f64| {
            let bj = beta.powf(j);
            bj * (j * ln_inv + 1.0 - bj) / (1.0 + bj * (j * ln_inv - 1.0))
        };
        let mut prev = f64::INFINITY;
        for i in 1..200 {
            let j = i as f64 * 0.5;
            let v = h(j);
            assert!(v < prev, "H not decreasing at {j}");
            prev = v;
        }
        // tightness: one fewer worker violates the error constraint
        let beta_j = 0.9f64.powi(point.iterations as i32);
        let b = 0.05;
        let lhs = beta_j + b * (1.0 - beta_j) / ((point.workers as f64 - 1.0) * 0.1);
        assert!(lhs > 0.2);
    }

    #[test]
    fn theorem4_respects_deadline_cap() {
        let k = constants();
        let point = co_optimize_workers_iterations(&k, 0.2, 25.0, 1.0, 10.0).unwrap();
        assert!(point.iterations <= 25);
        // infeasible when even the cap cannot decay the initial gap
        assert!(co_optimize_workers_iterations(&k, 0.01, 5.0, 1.0, 10.0).is_err());
    }

    #[test]
    fn dynamic_iteration_count_values() {
        assert_eq!(dynamic_iteration_count(1000, 2.0, 1.0).unwrap(), 10);
        // eta -> 1 recovers the static count within 1%
        let j = dynamic_iteration_count(10_000, 1.0 + 1e-6, 1.0).unwrap();
        assert!((j as f64 - 10_000.0).abs() / 10_000.0 < 0.01, "{j}");
        // ceil(log_1.0004(5)) = ceil(4024.3994) = 4025
        assert_eq!(dynamic_iteration_count(10_000, 1.0004, 1.0).unwrap(), 4025);
        // definition inversion: eta^(chi J') >= 1 + (eta-1) J
        for (j, eta, chi) in [(1000usize, 2.0, 1.0), (500, 1.5, 0.5), (10_000, 1.0004, 1.0)] {
            let jp = dynamic_iteration_count(j, eta, chi).unwrap();
            assert!(eta.powf(chi * jp as f64) >= 1.0 + (eta - 1.0) * j as f64);
        }
    }

    #[test]
    fn dynamic_bound_static_collapse_and_recursion_oracle() {
        let k = constants();
        let (n0, chi, d) = (2usize, 1.0, 1.5);
        // eta = 1: matches the constant-sequence bound exactly
        for j in [1usize, 10, 60] {
            let closed = error_bound_dynamic(&k, n0, 1.0, chi, j, d).unwrap();
            let e = d / n0 as f64;
            let rec = convergence::error_bound(&k, &vec![e; j]).unwrap();
            assert!((closed - rec).abs() < 1e-10, "j={j}: {closed} vs {rec}");
        }
        // general eta: matches the recursion on e_j = d/(n0 eta^(j-1))^chi
        for eta in [1.3, 2.0, 1.12] {
            for j in [1usize, 5, 40] {
                let closed = error_bound_dynamic(&k, n0, eta, chi, j, d).unwrap();
                let e: Vec<f64> = (1..=j)
                    .map(|i| (d / (n0 as f64 * eta.powi(i as i32 - 1)).powf(chi)).min(1.0))
                    .collect();
                let rec = convergence::error_bound(&k, &e).unwrap();
                assert!((closed - rec).abs() < 1e-10, "eta={eta} j={j}");
            }
        }
        // strict decrease toward zero for eta^chi = 2, beta = 0.9, n0 = 1
        let b10 = error_bound_dynamic(&k, 1, 2.0, 1.0, 10, d).unwrap();
        let b30 = error_bound_dynamic(&k, 1, 2.0, 1.0, 30, d).unwrap();
        let b60 = error_bound_dynamic(&k, 1, 2.0, 1.0, 60, d).unwrap();
        assert!(b60 < b30 && b30 < b10);
        assert!(b60 < 1e-3);
    }

    #[test]
    fn dynamic_vs_static_comparison() {
        let k = constants();
        let (n0, chi, d) = (1usize, 1.0, 1.0);
        // asymptote: B/(1-beta) = 0.005/0.1 = 0.05 * d with d=10 -> use d=10
        let rep = compare_dynamic_static(&k, n0, 2.0, chi, 5000, 10.0).unwrap();
        assert!((rep.static_asymptote - 0.5).abs() < 1e-12);
        assert!(rep.holds);
        assert!(rep.dynamic_bound < 0.5);
        assert!(rep.dynamic_bound <= rep.static_bound);
        // schedule collapse: at eta -> 1+ the dynamic bound agrees with the
        // static recursion at the same iteration count within 1%
        let j = 200;
        let dynb = error_bound_dynamic(&k, n0, 1.0 + 1e-6, chi, j, d).unwrap();
        let statb = convergence::error_bound(&k, &vec![d / n0 as f64; j]).unwrap();
        assert!((dynb - statb).abs() / statb < 0.01);
        // and the iteration counts converge too
        let jp = dynamic_iteration_count(j, 1.0 + 1e-6, chi).unwrap();
        assert!((jp as f64 - j as f64).abs() / j as f64 < 0.01);
    }

    #[test]
    fn geometric_series_continuity_at_one() {
        let j = 50usize;
        let at = geometric_series_total(1.0 + 1e-8, j);
        assert!((at - j as f64).abs() / j as f64 < 1e-6);
        assert_eq!(geometric_series_total(1.0, j), 50.0);
    }

    #[test]
    fn growth_completion_no_preemption_is_flat() {
        let rt = GrowthRuntime::Constant { seconds: 2.0 };
        let a = growth_completion_time(&rt, 4, 1.3, 0.0, 50);
        let b = growth_completion_time(&rt, 4, 2.9, 0.0, 50);
        assert_eq!(a, 100.0);
        assert_eq!(b, 100.0);
    }

    #[test]
    fn optimize_eta_matches_grid_oracle() {
        let k = constants();
        let (n0, q, chi, j, d) = (1usize, 0.5, 1.0, 50usize, 1.0);
        let rt = GrowthRuntime::Constant { seconds: 1.0 };
        let (deadline, eps, cap) = (120.0, 0.0055, 4.0);
        let sol = optimize_eta(&k, n0, q, chi, j, &rt, deadline, eps, d, cap).unwrap();
        // 1e5-point grid oracle over the same range
        let lo = (1.0f64 / 0.9).powf(1.0) * (1.0 + 1e-9);
        let mut best = f64::INFINITY;
        let mut best_eta = lo;
        let points = 100_000;
        for i in 0..=points {
            let eta = lo + (cap - lo) * i as f64 / points as f64;
            if error_bound_dynamic(&k, n0, eta, chi, j, d).unwrap() > eps {
                continue;
            }
            if growth_completion_time(&rt, n0, eta, q, j) > deadline {
                continue;
            }
            let obj = geometric_series_total(eta, j);
            if obj < best {
                best = obj;
                best_eta = eta;
            }
        }
        let step = (cap - lo) / points as f64;
        assert!((sol.eta - best_eta).abs() <= step + ETA_TOL * 2.0, "{} vs {best_eta}", sol.eta);
        assert!(sol.error_bound <= eps + 1e-12);
        assert!(sol.completion <= deadline + 1e-9);
    }

    #[test]
    fn optimize_eta_straggler_variant_and_joint() {
        let k = constants();
        let rt = GrowthRuntime::Straggler { rate: 1.0 };
        let sol = optimize_eta(&k, 2, 0.3, 1.0, 40, &rt, 400.0, 0.01, 1.0, 4.0).unwrap();
        assert!(sol.eta > (1.0f64 / 0.9));
        let joint = optimize_eta_joint(&k, 2, 0.3, 1.0, &rt, 400.0, 0.01, 1.0, 4.0).unwrap();
        assert!(joint.total_provisioning <= sol.total_provisioning + 1e-9);
        // infeasible when the deadline is absurd
        assert!(matches!(
            optimize_eta(&k, 2, 0.3, 1.0, 40, &rt, 0.5, 0.01, 1.0, 4.0),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn midpoint_convexity_certificates() {
        // objective and both constraint LHS are midpoint-convex in eta on the
        // admissible region, sampled on 100 triples
        let k = constants();
        let (n0, q, chi, j, d) = (1usize, 0.5, 1.0, 50usize, 1.0);
        let rt = GrowthRuntime::Straggler { rate: 1.0 };
        let lo = (1.0f64 / 0.9) * (1.0 + 1e-6);
        let hi = 4.0;
        let funcs: [Box<dyn Fn(f64) -> f64>; 3] = [
            Box::new(|eta| geometric_series_total(eta, j)),
            Box::new(|eta| growth_completion_time(&rt, n0, eta, q, j)),
            Box::new(|eta| error_bound_dynamic(&k, n0, eta, chi, j, d).unwrap()),
        ];
        for (fi, f) in funcs.iter().enumerate() {
            for t in 0..100 {
                let a = lo + (hi - lo) * (t as f64 / 100.0) * 0.5;
                let b = hi - (hi - lo) * (t as f64 / 100.0) * 0.37;
                let mid = 0.5 * (a + b);
                let lhs = f(mid);
                let rhs = 0.5 * (f(a) + f(b));
                assert!(lhs <= rhs * (1.0 + 1e-9) + 1e-12, "func {fi} triple {t}: {lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn schedule_validation_and_plan_truncation() {
        let s = WorkerSchedule::Geometric { initial_workers: 1, growth: 2.0, iterations: 25 };
        s.validate(0.9, 1.0).unwrap();
        let slow = WorkerSchedule::Geometric { initial_workers: 1, growth: 1.05, iterations: 25 };
        assert!(slow.validate(0.9, 1.0).is_err());
        let sol = GrowthSolution {
            eta: 2.0,
            iterations: 25,
            total_provisioning: geometric_series_total(2.0, 25),
            completion: 100.0,
            error_bound: 0.001,
        };
        let plan = ProvisionPlan::from_solution(&sol, 1);
        assert_eq!(plan.schedule_head.len(), 10);
        assert_eq!(plan.schedule_tail.len(), 10);
        assert_eq!(plan.schedule_head[0], 1);
        assert_eq!(plan.schedule_head[9], 512);
    }
}
