//! The synchronous-SGD error bound with a time-varying active worker count,
//! and its inversions: the per-iteration inverse-moment budget and the
//! iteration count needed to reach a target optimality gap.
//!
//! All error quantities are optimality gaps G(w) - G*.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Problem constants for the strongly convex SGD analysis.
///
/// The bound contracts by `beta = 1 - step_size * strong_convexity * moment_lower`
/// per iteration and accumulates gradient noise scaled by
/// `step_size^2 * lipschitz * variance_offset / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConstants {
    /// Lipschitz-smoothness constant of the objective gradient (L > 0).
    pub lipschitz: f64,
    /// Strong-convexity constant (0 < c <= L).
    pub strong_convexity: f64,
    /// Lower scalar of the first-moment inequality (mu > 0).
    pub moment_lower: f64,
    /// Upper scalar of the first-moment inequality (mu_G >= mu).
    pub moment_upper: f64,
    /// Additive gradient second-moment offset (M >= 0).
    pub variance_offset: f64,
    /// Multiplicative variance scalar (M_V >= 0); the second-moment gain is
    /// M_G = M_V + mu_G^2.
    pub variance_scalar: f64,
    /// Fixed step size (0 < alpha < mu / (L * M_G)).
    pub step_size: f64,
    /// Expected initial optimality gap E[G(w_0)] - G*.
    pub initial_gap: f64,
}

impl SgdConstants {
    /// Second-moment gain M_G = M_V + mu_G^2.
    pub fn second_moment_gain(&self) -> f64 {
        self.variance_scalar + self.moment_upper * self.moment_upper
    }

    /// Per-iteration contraction factor beta = 1 - alpha * c * mu.
    pub fn contraction(&self) -> f64 {
        1.0 - self.step_size * self.strong_convexity * self.moment_lower
    }

    /// Coefficient of each inverse-moment term: alpha^2 * L * M / 2.
    pub fn noise_coefficient(&self) -> f64 {
        0.5 * self.step_size * self.step_size * self.lipschitz * self.variance_offset
    }

    /// Asymptotic error floor for a constant inverse moment `e`:
    /// alpha * L * M * e / (2 * c * mu).
    pub fn noise_floor(&self, e: f64) -> f64 {
        self.noise_coefficient() * e / (1.0 - self.contraction())
    }

    /// Check every structural invariant, including the step-size bound.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lipschitz > 0.0) {
            return fail(format!("lipschitz must be > 0, got {}", self.lipschitz));
        }
        if !(self.strong_convexity > 0.0 && self.strong_convexity <= self.lipschitz) {
            return fail(format!(
                "strong_convexity must be in (0, lipschitz], got {}",
                self.strong_convexity
            ));
        }
        if !(self.moment_lower > 0.0) {
            return fail(format!("moment_lower must be > 0, got {}", self.moment_lower));
        }
        if self.moment_upper < self.moment_lower {
            return fail(format!(
                "moment_upper {} below moment_lower {}",
                self.moment_upper, self.moment_lower
            ));
        }
        if self.variance_offset < 0.0 || self.variance_scalar < 0.0 {
            return fail("variance terms must be non-negative".into());
        }
        if self.initial_gap < 0.0 {
            return fail(format!("initial_gap must be >= 0, got {}", self.initial_gap));
        }
        let alpha_cap = self.moment_lower / (self.lipschitz * self.second_moment_gain());
        if !(self.step_size > 0.0 && self.step_size < alpha_cap) {
            return fail(format!(
                "step_size must lie in (0, {alpha_cap}), got {}",
                self.step_size
            ));
        }
        let beta = self.contraction();
        if !(beta > 0.0 && beta < 1.0) {
            return fail(format!("contraction {beta} outside (0, 1)"));
        }
        Ok(())
    }
}

/// Per-iteration expected reciprocals of the active worker count,
/// e_j = E[1/y_j], each in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseMomentSeq(Vec<f64>);

impl InverseMomentSeq {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidParameter(format!(
                "inverse moment {bad} outside (0, 1]"
            )));
        }
        Ok(InverseMomentSeq(values))
    }

    /// A constant sequence e_j = e for `iterations` entries.
    pub fn constant(e: f64, iterations: usize) -> Result<Self> {
        Self::new(vec![e; iterations])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Expected optimality gap after running one iteration per entry of `e`:
/// `beta^J * G0 + (alpha^2 L M / 2) * sum_j beta^(J-j) * e_j`.
///
/// Evaluated by the forward contraction recursion (multiply by beta, add the
/// next noise term), so there is no explicit `beta^J` blow-up or underflow
/// artifact even at J = 1e6. Entries of `e` may be 0 (noiseless limit) and
/// must not exceed 1.
pub fn error_bound(k: &SgdConstants, e: &[f64]) -> Result<f64> {
    k.validate()?;
    if let Some(bad) = e.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(Error::InvalidParameter(format!(
            "inverse moment {bad} outside [0, 1]"
        )));
    }
    let beta = k.contraction();
    let coeff = k.noise_coefficient();
    let mut gap = k.initial_gap;
    for &ej in e {
        gap = beta * gap + coeff * ej;
    }
    Ok(gap)
}

/// The largest constant inverse moment for which the `iterations`-step bound
/// still reaches `target`:
/// `Q(eps) = 2 c mu (eps - beta^J G0) / (alpha L M (1 - beta^J))`.
///
/// Uses the geometric-sum denominator `1 - beta^J`, the form consistent with
/// inverting the bound recursion (so `error_bound` at constant `Q` returns
/// exactly `target`).
pub fn q_epsilon(k: &SgdConstants, target: f64, iterations: usize) -> Result<f64> {
    k.validate()?;
    if iterations == 0 {
        return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
    }
    let beta = k.contraction();
    let decayed = beta.powi(iterations as i32) * k.initial_gap;
    if target <= decayed {
        return Err(Error::InfeasibleTarget {
            min_feasible: decayed,
            target,
        });
    }
    let geo = (1.0 - beta.powi(iterations as i32)) / (1.0 - beta);
    Ok((target - decayed) / (k.noise_coefficient() * geo))
}

/// Smallest iteration count J with `error_bound` at constant inverse moment
/// `e` at or below `target`: the ceiling of `log_beta((eps - floor)/(G0 - floor))`.
///
/// Returns 0 when the initial gap already meets the target; errors when the
/// target sits at or below the asymptotic noise floor.
pub fn iterations_for_error(k: &SgdConstants, target: f64, e: f64) -> Result<usize> {
    k.validate()?;
    if !(0.0..=1.0).contains(&e) {
        return Err(Error::InvalidParameter(format!(
            "inverse moment {e} outside [0, 1]"
        )));
    }
    if target >= k.initial_gap {
        return Ok(0);
    }
    let floor = k.noise_floor(e);
    if target <= floor {
        return Err(Error::ErrorFloor { floor, target });
    }
    let beta = k.contraction();
    let ratio = (target - floor) / (k.initial_gap - floor);
    let raw = ratio.ln() / beta.ln();
    Ok(raw.ceil() as usize)
}

/// Jensen sanity check: for a distribution over positive worker counts, the
/// expected reciprocal is never below the reciprocal of the mean. Returns
/// whether the inequality holds (it always does for valid input).
pub fn jensen_penalty_check(distribution: &[(usize, f64)]) -> Result<bool> {
    if distribution.is_empty() {
        return Err(Error::InvalidParameter("empty distribution".into()));
    }
    let mut total = 0.0;
    let mut mean = 0.0;
    let mut inv = 0.0;
    for &(y, p) in distribution {
        if y == 0 || p < 0.0 {
            return Err(Error::InvalidParameter(
                "worker counts must be positive and probabilities non-negative".into(),
            ));
        }
        total += p;
        mean += p * y as f64;
        inv += p / y as f64;
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(inv >= 1.0 / mean)
}
