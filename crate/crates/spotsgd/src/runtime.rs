//! Per-iteration wall-clock model: the synchronous barrier waits for the
//! slowest of the active workers, then the server spends a fixed overhead
//! aggregating and broadcasting.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Per-worker gradient-time family plus the server overhead per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum RuntimeModel {
    /// Exponential gradient times with the given rate (1/seconds).
    Exponential { rate: f64, overhead: f64 },
    /// A fixed floor plus an exponential tail.
    ShiftedExponential { shift: f64, rate: f64, overhead: f64 },
    /// Identical deterministic gradient times.
    Deterministic { time: f64, overhead: f64 },
}

/// How to evaluate the expected maximum of the per-worker times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StragglerEstimate {
    /// Exact harmonic-number expectation H_m / rate.
    #[default]
    Exact,
    /// The (log m) / rate approximation.
    LogApprox,
}

impl RuntimeModel {
    pub fn overhead(&self) -> f64 {
        match self {
            RuntimeModel::Exponential { overhead, .. } => *overhead,
            RuntimeModel::ShiftedExponential { overhead, .. } => *overhead,
            RuntimeModel::Deterministic { overhead, .. } => *overhead,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            RuntimeModel::Exponential { rate, overhead } => rate > 0.0 && overhead >= 0.0,
            RuntimeModel::ShiftedExponential { shift, rate, overhead } => {
                shift >= 0.0 && rate > 0.0 && overhead >= 0.0
            }
            RuntimeModel::Deterministic { time, overhead } => time >= 0.0 && overhead >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid runtime model {self:?}")))
        }
    }

    /// Expected iteration runtime with `active` workers: the exact expected
    /// maximum of the per-worker times plus the server overhead.
    ///
    /// For m i.i.d. exponentials the expected maximum is exactly H_m / rate.
    pub fn expected_iteration_runtime(&self, active: usize) -> Result<f64> {
        self.expected_iteration_runtime_est(active, StragglerEstimate::Exact)
    }

    /// Like [`expected_iteration_runtime`](Self::expected_iteration_runtime)
    /// but selecting the straggler estimate; `LogApprox` reproduces the
    /// (log m)/rate form instead of the exact harmonic number.
    pub fn expected_iteration_runtime_est(
        &self,
        active: usize,
        est: StragglerEstimate,
    ) -> Result<f64> {
        if active < 1 {
            return Err(Error::InvalidParameter("active worker count must be >= 1".into()));
        }
        self.validate()?;
        Ok(self.expected_runtime_real(active as f64, est))
    }

    /// Expected iteration runtime at a fractional effective worker count,
    /// interpolating the harmonic number through the digamma function. Used
    /// when plugging in conditional-mean active counts.
    pub fn expected_runtime_real(&self, active: f64, est: StragglerEstimate) -> f64 {
        let straggle = |rate: f64| match est {
            StragglerEstimate::Exact => math::harmonic_real(active) / rate,
            StragglerEstimate::LogApprox => active.ln().max(0.0) / rate,
        };
        match *self {
            RuntimeModel::Exponential { rate, overhead } => straggle(rate) + overhead,
            RuntimeModel::ShiftedExponential { shift, rate, overhead } => {
                shift + straggle(rate) + overhead
            }
            RuntimeModel::Deterministic { time, overhead } => time + overhead,
        }
    }

    /// Draw one iteration duration: the maximum of `active` per-worker times
    /// plus the overhead.
    pub fn sample_iteration_runtime<R: Rng + ?Sized>(&self, active: usize, rng: &mut R) -> f64 {
        match *self {
            RuntimeModel::Exponential { rate, overhead } => {
                max_exp(rate, active, rng) + overhead
            }
            RuntimeModel::ShiftedExponential { shift, rate, overhead } => {
                shift + max_exp(rate, active, rng) + overhead
            }
            RuntimeModel::Deterministic { time, overhead } => {
                // consume no randomness; every worker takes the same time
                time + overhead
            }
        }
    }
}

fn max_exp<R: Rng + ?Sized>(rate: f64, n: usize, rng: &mut R) -> f64 {
    let exp = Exp::new(rate).expect("validated rate");
    let mut m: f64 = 0.0;
    for _ in 0..n {
        m = m.max(exp.sample(rng));
    }
    m
}

/// Expected completion time of `iterations` SGD iterations on `provisioned`
/// workers each independently preempted with probability `q` per iteration:
/// `sum_j E[R(ybar_j)] / (1 - q^n)`.
///
/// `ybar` supplies the expected active count per iteration; when `None`, the
/// binomial conditional mean `n (1-q) / (1 - q^n)` is used for every
/// iteration.
pub fn expected_completion_time_preemption(
    model: &RuntimeModel,
    iterations: usize,
    provisioned: usize,
    q: f64,
    ybar: Option<&[f64]>,
) -> Result<f64> {
    if provisioned < 1 || iterations < 1 {
        return Err(Error::InvalidParameter(
            "need at least one worker and one iteration".into(),
        ));
    }
    if !(0.0..1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!(
            "preemption probability {q} outside [0, 1)"
        )));
    }
    model.validate()?;
    let n = provisioned as f64;
    let p_active = 1.0 - q.powf(n);
    let default_mean = n * (1.0 - q) / p_active;
    let mut total = 0.0;
    for j in 0..iterations {
        let m = match ybar {
            Some(seq) => {
                let v = *seq.get(j).ok_or_else(|| {
                    Error::InvalidParameter("ybar shorter than the iteration count".into())
                })?;
                if !(v >= 1.0 && v <= n) {
                    return Err(Error::InvalidParameter(format!(
                        "expected active count {v} outside [1, {n}]"
                    )));
                }
                v
            }
            None => default_mean,
        };
        total += model.expected_runtime_real(m, StragglerEstimate::Exact);
    }
    Ok(total / p_active)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn expected_runtime_harmonic_values() {
        let m = RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 };
        assert!((m.expected_iteration_runtime(1).unwrap() - 1.0).abs() < 1e-15);
        assert!((m.expected_iteration_runtime(2).unwrap() - 1.5).abs() < 1e-15);
        assert!((m.expected_iteration_runtime(4).unwrap() - 25.0 / 12.0).abs() < 1e-15);
        assert!(m.expected_iteration_runtime(0).is_err());
    }

    #[test]
    fn shifted_and_deterministic_families() {
        let s = RuntimeModel::ShiftedExponential { shift: 2.0, rate: 1.0, overhead: 0.5 };
        assert!((s.expected_iteration_runtime(2).unwrap() - 4.0).abs() < 1e-15);
        let d = RuntimeModel::Deterministic { time: 3.0, overhead: 0.5 };
        assert!((d.expected_iteration_runtime(7).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn log_approx_close_to_harmonic() {
        // |H_m - (ln m + gamma)| < 1/(2m) on a grid up to 1e4
        for m in [1usize, 2, 3, 10, 100, 1000, 10_000] {
            let h = math::harmonic(m);
            let approx = (m as f64).ln() + math::EULER_GAMMA;
            assert!((h - approx).abs() < 0.5 / m as f64, "m={m}");
        }
        let rt = RuntimeModel::Exponential { rate: 2.0, overhead: 1.0 };
        let la = rt
            .expected_iteration_runtime_est(100, StragglerEstimate::LogApprox)
            .unwrap();
        assert!((la - ((100f64).ln() / 2.0 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn monotone_in_active_workers() {
        for model in [
            RuntimeModel::Exponential { rate: 0.7, overhead: 0.1 },
            RuntimeModel::ShiftedExponential { shift: 1.0, rate: 2.0, overhead: 0.0 },
        ] {
            let mut prev = 0.0;
            for m in 1..200 {
                let v = model.expected_iteration_runtime(m).unwrap();
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn monte_carlo_max_agrees_with_expectation() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for model in [
            RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 },
            RuntimeModel::ShiftedExponential { shift: 0.5, rate: 2.0, overhead: 0.25 },
            RuntimeModel::Deterministic { time: 1.25, overhead: 0.25 },
        ] {
            for active in [1usize, 2, 4, 16] {
                let trials = 100_000;
                let mut acc = 0.0;
                for _ in 0..trials {
                    acc += model.sample_iteration_runtime(active, &mut rng);
                }
                let mc = acc / trials as f64;
                let expect = model.expected_iteration_runtime(active).unwrap();
                assert!(
                    ((mc - expect) / expect).abs() < 0.01,
                    "{model:?} m={active}: mc {mc} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn preemption_completion_no_idle_at_q_zero() {
        let model = RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 };
        let v = expected_completion_time_preemption(&model, 10, 4, 0.0, None).unwrap();
        assert!((v - 10.0 * 25.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn preemption_completion_inflation() {
        // q = 0.5, n = 1, deterministic R = 1, J = 10 -> 20
        let model = RuntimeModel::Deterministic { time: 1.0, overhead: 0.0 };
        let v = expected_completion_time_preemption(&model, 10, 1, 0.5, None).unwrap();
        assert!((v - 20.0).abs() < 1e-12);
        // diverges as q -> 1
        let mut prev = 0.0;
        for i in 1..40 {
            let q = i as f64 / 40.0;
            let v = expected_completion_time_preemption(&model, 10, 1, q, None).unwrap();
            assert!(v > prev);
            prev = v;
        }
        assert!(expected_completion_time_preemption(&model, 10, 1, 1.0, None).is_err());
    }

    #[test]
    fn preemption_completion_discrete_event_oracle() {
        // independent discrete-event oracle for q = 0.5, n = 1, R = 1, J = 10:
        // simulate idle slots explicitly and average
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let trials = 200_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let mut t = 0.0;
            let mut done = 0;
            while done < 10 {
                t += 1.0; // slot of length R = 1 whether idle or active
                if rng.random::<f64>() >= 0.5 {
                    done += 1;
                }
            }
            acc += t;
        }
        let mc = acc / trials as f64;
        assert!((mc - 20.0).abs() / 20.0 < 0.01, "mc {mc}");
    }

    #[test]
    fn preemption_completion_custom_ybar() {
        let model = RuntimeModel::Exponential { rate: 1.0, overhead: 0.0 };
        let ybar = [4.0, 2.0, 1.0];
        let v = expected_completion_time_preemption(&model, 3, 4, 0.0, Some(&ybar)).unwrap();
        let expect = 25.0 / 12.0 + 1.5 + 1.0;
        assert!((v - expect).abs() < 1e-12);
    }
}
