//! Spot-price distributions: parametric (uniform, truncated Gaussian) and
//! empirical step CDFs fitted from historical traces. All mass lives on a
//! bounded support `[lower, upper]`; the optimizers only ever query the CDF,
//! the quantile, and conditional price integrals.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;

/// Quantile inversion tolerance for models without a closed-form inverse.
const QUANTILE_BISECT_TOL: f64 = 1e-9;
/// Quadrature tolerance for the truncated-Gaussian price integrals.
const GAUSSIAN_QUAD_TOL: f64 = 1e-8;
/// Relative offset placed below the smallest empirical sample so that the
/// support lower bound carries zero mass (F(lower) = 0).
const EMPIRICAL_SUPPORT_OFFSET: f64 = 1e-9;

/// A spot-price distribution on bounded support.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PriceModel {
    /// Uniform on `[lower, upper]`.
    Uniform { lower: f64, upper: f64 },
    /// Gaussian restricted to `[lower, upper]` and renormalized.
    TruncatedGaussian {
        mean: f64,
        variance: f64,
        lower: f64,
        upper: f64,
    },
    /// Step CDF over an observed sample (kept sorted).
    Empirical { samples: Vec<f64>, lower: f64 },
}

/// Uniform price distribution on `[lower, upper)`.
pub fn make_uniform(lower: f64, upper: f64) -> Result<PriceModel> {
    check_support(lower, upper)?;
    Ok(PriceModel::Uniform { lower, upper })
}

/// Gaussian with the given mean and variance, truncated to `[lower, upper]`
/// and renormalized. The normal CDF behind it is a Cody-style rational
/// approximation accurate to well under 1e-7.
pub fn make_truncated_gaussian(mean: f64, variance: f64, lower: f64, upper: f64) -> Result<PriceModel> {
    check_support(lower, upper)?;
    if !(variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variance must be positive, got {variance}"
        )));
    }
    Ok(PriceModel::TruncatedGaussian {
        mean,
        variance,
        lower,
        upper,
    })
}

/// Empirical step-CDF model from a price trace.
pub fn fit_empirical(trace: &PriceTrace) -> Result<PriceModel> {
    if trace.records.is_empty() {
        return Err(Error::InvalidParameter("empty price trace".into()));
    }
    let mut samples: Vec<f64> = trace.records.iter().map(|r| r.price).collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = samples[0];
    let lower = min - EMPIRICAL_SUPPORT_OFFSET * min.abs().max(1.0);
    Ok(PriceModel::Empirical { samples, lower })
}

fn check_support(lower: f64, upper: f64) -> Result<()> {
    if !(lower < upper) {
        return Err(Error::InvalidParameter(format!(
            "price support needs lower < upper, got [{lower}, {upper}]"
        )));
    }
    Ok(())
}

impl PriceModel {
    /// Support lower bound; F(lower_bound) = 0.
    pub fn lower_bound(&self) -> f64 {
        match self {
            PriceModel::Uniform { lower, .. } => *lower,
            PriceModel::TruncatedGaussian { lower, .. } => *lower,
            PriceModel::Empirical { lower, .. } => *lower,
        }
    }

    /// Support upper bound; F(upper_bound) = 1.
    pub fn upper_bound(&self) -> f64 {
        match self {
            PriceModel::Uniform { upper, .. } => *upper,
            PriceModel::TruncatedGaussian { upper, .. } => *upper,
            PriceModel::Empirical { samples, .. } => *samples.last().unwrap(),
        }
    }

    /// Cumulative distribution function, clamped to [0, 1] outside support.
    pub fn cdf(&self, p: f64) -> f64 {
        match self {
            PriceModel::Uniform { lower, upper } => ((p - lower) / (upper - lower)).clamp(0.0, 1.0),
            PriceModel::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                if p <= *lower {
                    return 0.0;
                }
                if p >= *upper {
                    return 1.0;
                }
                let s = variance.sqrt();
                let phi_lo = math::normal_cdf((lower - mean) / s);
                let phi_hi = math::normal_cdf((upper - mean) / s);
                ((math::normal_cdf((p - mean) / s) - phi_lo) / (phi_hi - phi_lo)).clamp(0.0, 1.0)
            }
            PriceModel::Empirical { samples, .. } => {
                let count = samples.partition_point(|s| *s <= p);
                count as f64 / samples.len() as f64
            }
        }
    }

    /// Density, where one exists. Empirical step models have none.
    pub fn pdf(&self, p: f64) -> Option<f64> {
        match self {
            PriceModel::Uniform { lower, upper } => {
                Some(if p >= *lower && p <= *upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                })
            }
            PriceModel::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                if p < *lower || p > *upper {
                    return Some(0.0);
                }
                let s = variance.sqrt();
                let z = math::normal_cdf((upper - mean) / s) - math::normal_cdf((lower - mean) / s);
                Some(math::normal_pdf((p - mean) / s) / (s * z))
            }
            PriceModel::Empirical { .. } => None,
        }
    }

    /// Quantile: smallest price p with `F(p) >= u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self {
            PriceModel::Uniform { lower, upper } => lower + u * (upper - lower),
            PriceModel::TruncatedGaussian { lower, upper, .. } => {
                if u == 0.0 {
                    return *lower;
                }
                if u == 1.0 {
                    return *upper;
                }
                math::bisect_lowest_true(|p| self.cdf(p) >= u, *lower, *upper, QUANTILE_BISECT_TOL)
            }
            PriceModel::Empirical { samples, lower } => {
                if u == 0.0 {
                    return *lower;
                }
                let n = samples.len() as f64;
                // smallest sample s with count(<= s)/n >= u
                let need = (u * n).ceil() as usize;
                samples[need.saturating_sub(1).min(samples.len() - 1)]
            }
        }
    }

    /// Distribution mean E[p].
    pub fn mean(&self) -> f64 {
        match self {
            PriceModel::Uniform { lower, upper } => 0.5 * (lower + upper),
            PriceModel::TruncatedGaussian {
                mean,
                variance,
                lower,
                upper,
            } => {
                let s = variance.sqrt();
                let a = (lower - mean) / s;
                let b = (upper - mean) / s;
                let z = math::normal_cdf(b) - math::normal_cdf(a);
                mean + s * (math::normal_pdf(a) - math::normal_pdf(b)) / z
            }
            PriceModel::Empirical { samples, .. } => {
                math::pairwise_sum(samples) / samples.len() as f64
            }
        }
    }

    /// Expected price conditioned on acceptance at bid `b`:
    /// `lower + integral over [lower, b] of (1 - F(p)/F(b)) dp`.
    ///
    /// Closed form for uniform and empirical models; adaptive quadrature for
    /// the truncated Gaussian. Errors when `F(b) = 0` (the bid never wins).
    pub fn mean_price_below(&self, b: f64) -> Result<f64> {
        let (lo, hi) = (self.lower_bound(), self.upper_bound());
        if b > hi * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "bid {b} above the support upper bound {hi}"
            )));
        }
        let b = b.min(hi);
        let fb = self.cdf(b);
        if fb <= 0.0 {
            return Err(Error::InfeasibleBid { bid: b });
        }
        match self {
            PriceModel::Uniform { lower, .. } => Ok(0.5 * (lower + b)),
            PriceModel::TruncatedGaussian { .. } => {
                let integral =
                    math::adaptive_simpson(|p| 1.0 - self.cdf(p) / fb, lo, b, GAUSSIAN_QUAD_TOL);
                Ok(lo + integral)
            }
            PriceModel::Empirical { samples, .. } => {
                let count = samples.partition_point(|s| *s <= b);
                Ok(math::pairwise_sum(&samples[..count]) / count as f64)
            }
        }
    }

    /// Partial first moment `integral over (a, b] of p dF(p)`, used by the
    /// two-bid cost expansion. Bounds are clamped to the support.
    pub fn partial_mean(&self, a: f64, b: f64) -> f64 {
        let lo = self.lower_bound();
        let hi = self.upper_bound();
        let a = a.clamp(lo, hi);
        let b = b.clamp(lo, hi);
        if b <= a {
            return 0.0;
        }
        match self {
            PriceModel::Uniform { lower, upper } => (b * b - a * a) / (2.0 * (upper - lower)),
            PriceModel::TruncatedGaussian { .. } => {
                math::adaptive_simpson(|p| p * self.pdf(p).unwrap(), a, b, GAUSSIAN_QUAD_TOL)
            }
            PriceModel::Empirical { samples, .. } => {
                let i = samples.partition_point(|s| *s <= a);
                let j = samples.partition_point(|s| *s <= b);
                math::pairwise_sum(&samples[i..j]) / samples.len() as f64
            }
        }
    }

    /// Inverse-transform sample of one price. Uses u in (0, 1] so empirical
    /// models always return an observed trace value.
    pub fn sample_price<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.quantile(u)
    }
}

/// One observation of a spot-price history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Seconds since the Unix epoch.
    pub timestamp: i64,
    /// Price per hour.
    pub price: f64,
}

/// An ordered spot-price history for one instance type in one zone.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriceTrace {
    pub records: Vec<TraceRecord>,
    pub instance_type: String,
    pub zone: String,
}

impl PriceTrace {
    /// Build a trace from (timestamp, price) pairs, sorting by timestamp.
    /// Rejects duplicate timestamps and non-positive prices.
    pub fn new(mut records: Vec<TraceRecord>, instance_type: &str, zone: &str) -> Result<Self> {
        records.sort_by_key(|r| r.timestamp);
        for pair in records.windows(2) {
            if pair[0].timestamp == pair[1].timestamp {
                return Err(Error::InvalidParameter(format!(
                    "duplicate timestamp {} in price trace",
                    pair[0].timestamp
                )));
            }
        }
        if let Some(bad) = records.iter().find(|r| !(r.price > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "non-positive price {} at timestamp {}",
                bad.price, bad.timestamp
            )));
        }
        Ok(PriceTrace {
            records,
            instance_type: instance_type.to_string(),
            zone: zone.to_string(),
        })
    }

    /// Load a CSV trace with header `timestamp,price`. Timestamps may be
    /// integer epoch seconds or ISO-8601 / RFC 3339 strings. Rows need not be
    /// pre-sorted.
    pub fn load_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    /// Parse CSV text; `origin` labels diagnostics.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut lines = text.lines().enumerate();
        let header = lines.next().map(|(_, l)| l.trim()).unwrap_or("");
        if header != "timestamp,price" {
            return Err(Error::Parse {
                path: origin.into(),
                line: 1,
                message: format!("expected header `timestamp,price`, got `{header}`"),
            });
        }
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, ',');
            let ts_raw = parts.next().unwrap_or("").trim();
            let price_raw = parts.next().ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: line_no,
                message: "missing price column".into(),
            })?;
            let timestamp = parse_timestamp(ts_raw).ok_or_else(|| Error::Parse {
                path: origin.into(),
                line: line_no,
                message: format!("unparseable timestamp `{ts_raw}`"),
            })?;
            let price: f64 = price_raw.trim().parse().map_err(|_| Error::Parse {
                path: origin.into(),
                line: line_no,
                message: format!("unparseable price `{}`", price_raw.trim()),
            })?;
            records.push(TraceRecord { timestamp, price });
        }
        PriceTrace::new(records, "", "").map_err(|e| Error::Parse {
            path: origin.into(),
            line: 0,
            message: e.to_string(),
        })
    }

    /// Price in effect at `offset` seconds after the trace start: the last
    /// record at or before that instant (step function). `None` once the
    /// offset runs past the final record.
    pub fn price_at_offset(&self, offset: f64) -> Option<f64> {
        let start = self.records.first()?.timestamp;
        let end = self.records.last()?.timestamp;
        if offset < 0.0 || offset > (end - start) as f64 {
            return None;
        }
        let t = start + offset.floor() as i64;
        let idx = self.records.partition_point(|r| r.timestamp <= t);
        Some(self.records[idx - 1].price)
    }

    /// Seconds covered by the trace.
    pub fn span(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => (b.timestamp - a.timestamp) as f64,
            _ => 0.0,
        }
    }
}

fn parse_timestamp(raw: &str) -> Option<i64> {
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    // date-time without zone, e.g. 2023-01-05T10:00:00
    if let Ok(naive) = chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S") {
        return Some(naive.and_utc().timestamp());
    }
    None
}
