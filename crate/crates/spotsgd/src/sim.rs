//! Discrete-event Monte Carlo simulation of spot-market and preemptible
//! training runs: price draws or trace replay, bid-gated activity, binomial
//! preemption, straggler runtimes, idle periods, and cost/time accounting.
//! Every closed form in the optimizer modules is validated against this
//! engine, and the dynamic re-bidding strategy executes through it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bid::{self, JobRequirements};
use crate::convergence::{InverseMomentSeq, SgdConstants};
use crate::error::{Error, Result};
use crate::math;
use crate::preemptible::WorkerSchedule;
use crate::price::{PriceModel, PriceTrace};
use crate::runtime::RuntimeModel;

/// Trials per work unit handed to the thread pool. Fixed so aggregation
/// order, and therefore output bytes, never depend on thread scheduling.
const TRIAL_CHUNK: usize = 256;

/// Where iteration-start prices come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum PriceMode {
    /// Fresh i.i.d. draw from the price model at every decision point.
    IidRedraw,
    /// Replay a historical trace mapped onto the simulation clock (prices
    /// held constant between records).
    TraceReplay(PriceTrace),
}

/// What is being executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "plan", rename_all = "kebab-case")]
pub enum SimPlan {
    /// Two-group bid plan (uniform bids are the b1 = b2 special case).
    Bid {
        high_bid: f64,
        low_bid: f64,
        high_group: usize,
        total_workers: usize,
        iterations: usize,
    },
    /// Bid above any possible price: never interrupted, charged the
    /// prevailing price.
    NoInterruptions { workers: usize, iterations: usize },
    /// Fixed-price instances preempted independently with probability
    /// `preempt_prob` per worker per iteration.
    Preemptible {
        schedule: WorkerSchedule,
        preempt_prob: f64,
        unit_price: f64,
    },
}

/// Event-loop policy knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimKnobs {
    /// Clock advance per idle period when `idle_slot_runtime` is off.
    pub redraw_interval: f64,
    /// When set, an idle period advances by a freshly drawn would-be
    /// iteration duration instead of the fixed interval; this reproduces the
    /// closed-form completion formulas, whose idle periods are
    /// iteration-length slots.
    pub idle_slot_runtime: bool,
    /// Hold the iteration-start price for the whole iteration (the analytic
    /// assumption). When off, the price is re-read every `redraw_interval`
    /// during execution and a rise above what sustains the running active
    /// set aborts the iteration: progress is lost, elapsed time is still
    /// paid for.
    pub price_fixed_within_iteration: bool,
    /// Record every executed iteration (active count, price, duration) in
    /// the outcome.
    pub capture_iterations: bool,
}

impl Default for SimKnobs {
    fn default() -> Self {
        SimKnobs {
            redraw_interval: 4.0,
            idle_slot_runtime: false,
            price_fixed_within_iteration: true,
            capture_iterations: false,
        }
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub plan: SimPlan,
    pub price: PriceModel,
    pub price_mode: PriceMode,
    pub runtime: RuntimeModel,
    #[serde(default)]
    pub knobs: SimKnobs,
    pub trials: usize,
    pub seed: u64,
}

/// Per-trial accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cost: f64,
    pub completion: f64,
    pub iterations: usize,
    pub idle: f64,
}

/// One executed iteration, captured when `capture_iterations` is on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationEvent {
    pub iteration: usize,
    pub active: usize,
    pub price: f64,
    pub duration: f64,
}

/// Monte Carlo estimates plus per-trial records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimOutcome {
    pub trials: Vec<TrialRecord>,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub mean_completion: f64,
    pub se_completion: f64,
    pub mean_idle: f64,
    /// Per executed iteration, averaged across trials.
    pub mean_active: Vec<f64>,
    pub mean_inverse_active: Vec<f64>,
    pub cum_cost_mean: Vec<f64>,
    pub cum_time_mean: Vec<f64>,
    /// Trials cut short by trace exhaustion (their partial records are in
    /// `partial_trials`, with pro-rata cost for the unfinished iteration).
    pub truncated_trials: usize,
    pub partial_trials: Vec<TrialRecord>,
    /// Per-trial executed iterations, when capture was requested.
    pub iteration_log: Option<Vec<Vec<IterationEvent>>>,
}

impl SimOutcome {
    /// Planned iteration count (length of the per-iteration trajectories).
    pub fn horizon(&self) -> usize {
        self.mean_active.len()
    }
}

/// Per-iteration mean of 1/y across trials, packaged for the error bound.
pub fn empirical_inverse_moments(outcome: &SimOutcome) -> Result<InverseMomentSeq> {
    if outcome.trials.is_empty() {
        return Err(Error::InvalidParameter(
            "outcome holds no completed trials".into(),
        ));
    }
    InverseMomentSeq::new(outcome.mean_inverse_active.clone())
}

enum TrialEnd {
    Complete,
    Truncated { iteration: usize },
}

struct TrialScratch {
    active: Vec<u32>,
    cum_cost: Vec<f64>,
    cum_time: Vec<f64>,
    events: Vec<IterationEvent>,
}

impl TrialScratch {
    fn new() -> Self {
        TrialScratch {
            active: Vec::new(),
            cum_cost: Vec::new(),
            cum_time: Vec::new(),
            events: Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.active.clear();
        self.cum_cost.clear();
        self.cum_time.clear();
        self.events.clear();
    }
}

struct ChunkAccum {
    records: Vec<TrialRecord>,
    partials: Vec<(usize, TrialRecord)>,
    active_sum: Vec<f64>,
    inv_sum: Vec<f64>,
    cost_sum: Vec<f64>,
    time_sum: Vec<f64>,
    logs: Vec<Vec<IterationEvent>>,
    first_truncation: Option<(usize, usize)>, // (trial, iteration)
}

impl ChunkAccum {
    fn new(horizon: usize) -> Self {
        ChunkAccum {
            records: Vec::new(),
            partials: Vec::new(),
            active_sum: vec![0.0; horizon],
            inv_sum: vec![0.0; horizon],
            cost_sum: vec![0.0; horizon],
            time_sum: vec![0.0; horizon],
            logs: Vec::new(),
            first_truncation: None,
        }
    }
}

/// Trial-local price source.
enum PriceSource<'a> {
    Iid(&'a PriceModel),
    Trace(&'a PriceTrace),
}

impl PriceSource<'_> {
    /// Price at the given clock; `None` means the trace ran out.
    fn at<R: Rng + ?Sized>(&self, clock: f64, rng: &mut R) -> Option<f64> {
        match self {
            PriceSource::Iid(model) => Some(model.sample_price(rng)),
            PriceSource::Trace(trace) => trace.price_at_offset(clock),
        }
    }
}

struct BidSpec {
    high_bid: f64,
    low_bid: f64,
    high_group: usize,
    total_workers: usize,
    iterations: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_bid_trial<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &BidSpec,
    source: &PriceSource,
    price_model: &PriceModel,
    rt: &RuntimeModel,
    knobs: &SimKnobs,
    record: &mut TrialRecord,
    scratch: &mut TrialScratch,
    iteration_offset: usize,
) -> TrialEnd {
    let gamma = {
        let f1 = price_model.cdf(spec.high_bid.min(price_model.upper_bound()));
        if f1 > 0.0 {
            price_model.cdf(spec.low_bid) / f1
        } else {
            1.0
        }
    };
    let mut done = 0usize;
    while done < spec.iterations {
        let Some(p) = source.at(record.completion, rng) else {
            return TrialEnd::Truncated { iteration: iteration_offset + done };
        };
        if p > spec.high_bid {
            // idle period: no cost accrues
            let dt = if knobs.idle_slot_runtime {
                let surrogate = if rng.random::<f64>() < gamma {
                    spec.total_workers
                } else {
                    spec.high_group
                };
                rt.sample_iteration_runtime(surrogate, rng)
            } else {
                knobs.redraw_interval
            };
            record.completion += dt;
            record.idle += dt;
            continue;
        }
        let active = if p <= spec.low_bid {
            spec.total_workers
        } else {
            spec.high_group
        };
        debug_assert!(p <= spec.high_bid);
        debug_assert!(active == spec.total_workers || p > spec.low_bid);
        let duration = rt.sample_iteration_runtime(active, rng);
        if knobs.price_fixed_within_iteration {
            record.completion += duration;
            record.cost += active as f64 * p * duration;
            finish_iteration(record, scratch, iteration_offset + done, active, p, duration, knobs);
            done += 1;
        } else {
            // stress mode: re-read the price mid-iteration; a rise above the
            // level sustaining the current active set aborts, losing progress
            // but paying for the elapsed time
            let sustain = if active == spec.total_workers {
                spec.low_bid
            } else {
                spec.high_bid
            };
            let mut t = 0.0;
            let mut cur = p;
            let mut aborted = false;
            while t < duration {
                let step = knobs.redraw_interval.min(duration - t);
                record.cost += active as f64 * cur * step;
                record.completion += step;
                t += step;
                if t < duration {
                    match source.at(record.completion, rng) {
                        Some(next) => {
                            if next > sustain {
                                aborted = true;
                                break;
                            }
                            cur = next;
                        }
                        None => return TrialEnd::Truncated { iteration: iteration_offset + done },
                    }
                }
            }
            if !aborted {
                finish_iteration(record, scratch, iteration_offset + done, active, p, duration, knobs);
                done += 1;
            }
        }
    }
    TrialEnd::Complete
}

fn finish_iteration(
    record: &mut TrialRecord,
    scratch: &mut TrialScratch,
    iteration: usize,
    active: usize,
    price: f64,
    duration: f64,
    knobs: &SimKnobs,
) {
    record.iterations += 1;
    scratch.active.push(active as u32);
    scratch.cum_cost.push(record.cost);
    scratch.cum_time.push(record.completion);
    if knobs.capture_iterations {
        scratch.events.push(IterationEvent {
            iteration,
            active,
            price,
            duration,
        });
    }
}

fn run_preemptible_trial<R: Rng + ?Sized>(
    rng: &mut R,
    schedule: &[usize],
    q: f64,
    unit_price: f64,
    rt: &RuntimeModel,
    knobs: &SimKnobs,
    record: &mut TrialRecord,
    scratch: &mut TrialScratch,
) {
    for (j, &provisioned) in schedule.iter().enumerate() {
        let active = loop {
            let y = if q == 0.0 {
                provisioned as u64
            } else {
                Binomial::new(provisioned as u64, 1.0 - q)
                    .expect("validated q")
                    .sample(rng)
            };
            if y > 0 {
                break y as usize;
            }
            // idle period: every provisioned worker was preempted
            let dt = if knobs.idle_slot_runtime {
                let surrogate = conditional_positive_binomial(rng, provisioned, q);
                rt.sample_iteration_runtime(surrogate, rng)
            } else {
                knobs.redraw_interval
            };
            record.completion += dt;
            record.idle += dt;
        };
        let duration = rt.sample_iteration_runtime(active, rng);
        record.completion += duration;
        record.cost += active as f64 * unit_price * duration;
        finish_iteration(record, scratch, j, active, unit_price, duration, knobs);
    }
}

fn conditional_positive_binomial<R: Rng + ?Sized>(rng: &mut R, n: usize, q: f64) -> usize {
    let dist = Binomial::new(n as u64, 1.0 - q).expect("validated q");
    for _ in 0..1024 {
        let y = dist.sample(rng);
        if y > 0 {
            return y as usize;
        }
    }
    1
}

/// Deterministic per-trial RNG: one seeded generator, one stream per trial.
fn trial_rng(seed: u64, trial: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    rng
}

fn validate_config(config: &SimConfig) -> Result<usize> {
    if config.trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    if !(config.knobs.redraw_interval > 0.0) {
        return Err(Error::InvalidParameter("redraw interval must be positive".into()));
    }
    config.runtime.validate()?;
    let horizon = match &config.plan {
        SimPlan::Bid {
            high_bid,
            low_bid,
            high_group,
            total_workers,
            iterations,
        } => {
            if low_bid > high_bid {
                return Err(Error::InvalidParameter("low bid above high bid".into()));
            }
            if *high_group < 1 || high_group > total_workers {
                return Err(Error::InvalidParameter("need 1 <= n1 <= n".into()));
            }
            if config.price.cdf(*high_bid) <= 0.0 {
                return Err(Error::InfeasibleBid { bid: *high_bid });
            }
            *iterations
        }
        SimPlan::NoInterruptions { workers, iterations } => {
            if *workers < 1 {
                return Err(Error::InvalidParameter("need at least one worker".into()));
            }
            *iterations
        }
        SimPlan::Preemptible { schedule, preempt_prob, unit_price } => {
            if !(0.0..1.0).contains(preempt_prob) {
                return Err(Error::InvalidParameter(format!(
                    "preemption probability {preempt_prob} outside [0, 1)"
                )));
            }
            if !(*unit_price > 0.0) {
                return Err(Error::InvalidParameter("unit price must be positive".into()));
            }
            if matches!(config.price_mode, PriceMode::TraceReplay(_)) {
                return Err(Error::InvalidParameter(
                    "preemptible plans use a stable unit price, not a trace".into(),
                ));
            }
            schedule.provisioned().len()
        }
    };
    if horizon == 0 {
        return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
    }
    Ok(horizon)
}

/// Run the configured Monte Carlo experiment. Identical `(config, seed)`
/// produce bit-identical outcomes; trials run on independent, documented
/// substreams of the seeded generator and may execute in parallel.
pub fn simulate(config: &SimConfig) -> Result<SimOutcome> {
    let horizon = validate_config(config)?;
    let schedule = match &config.plan {
        SimPlan::Preemptible { schedule, .. } => schedule.provisioned(),
        _ => Vec::new(),
    };

    let chunk_count = config.trials.div_ceil(TRIAL_CHUNK);
    let chunks: Vec<ChunkAccum> = (0..chunk_count)
        .into_par_iter()
        .map(|chunk_idx| {
            let start = chunk_idx * TRIAL_CHUNK;
            let end = (start + TRIAL_CHUNK).min(config.trials);
            let mut acc = ChunkAccum::new(horizon);
            let mut scratch = TrialScratch::new();
            for trial in start..end {
                let mut rng = trial_rng(config.seed, trial);
                let mut record = TrialRecord {
                    cost: 0.0,
                    completion: 0.0,
                    iterations: 0,
                    idle: 0.0,
                };
                scratch.clear();
                let end_state = match &config.plan {
                    SimPlan::Bid {
                        high_bid,
                        low_bid,
                        high_group,
                        total_workers,
                        iterations,
                    } => {
                        let spec = BidSpec {
                            high_bid: *high_bid,
                            low_bid: *low_bid,
                            high_group: *high_group,
                            total_workers: *total_workers,
                            iterations: *iterations,
                        };
                        let source = match &config.price_mode {
                            PriceMode::IidRedraw => PriceSource::Iid(&config.price),
                            PriceMode::TraceReplay(trace) => PriceSource::Trace(trace),
                        };
                        run_bid_trial(
                            &mut rng,
                            &spec,
                            &source,
                            &config.price,
                            &config.runtime,
                            &config.knobs,
                            &mut record,
                            &mut scratch,
                            0,
                        )
                    }
                    SimPlan::NoInterruptions { workers, iterations } => {
                        let spec = BidSpec {
                            high_bid: f64::INFINITY,
                            low_bid: f64::INFINITY,
                            high_group: *workers,
                            total_workers: *workers,
                            iterations: *iterations,
                        };
                        let source = match &config.price_mode {
                            PriceMode::IidRedraw => PriceSource::Iid(&config.price),
                            PriceMode::TraceReplay(trace) => PriceSource::Trace(trace),
                        };
                        run_bid_trial(
                            &mut rng,
                            &spec,
                            &source,
                            &config.price,
                            &config.runtime,
                            &config.knobs,
                            &mut record,
                            &mut scratch,
                            0,
                        )
                    }
                    SimPlan::Preemptible { preempt_prob, unit_price, .. } => {
                        run_preemptible_trial(
                            &mut rng,
                            &schedule,
                            *preempt_prob,
                            *unit_price,
                            &config.runtime,
                            &config.knobs,
                            &mut record,
                            &mut scratch,
                        );
                        TrialEnd::Complete
                    }
                };
                match end_state {
                    TrialEnd::Complete => {
                        merge_trial(&mut acc, &record, &scratch, config.knobs.capture_iterations);
                    }
                    TrialEnd::Truncated { iteration } => {
                        acc.partials.push((trial, record));
                        if acc.first_truncation.is_none() {
                            acc.first_truncation = Some((trial, iteration));
                        }
                    }
                }
            }
            acc
        })
        .collect();

    let mut records = Vec::with_capacity(config.trials);
    let mut partials = Vec::new();
    let mut logs = Vec::new();
    let mut first_truncation: Option<(usize, usize)> = None;
    for c in &chunks {
        records.extend_from_slice(&c.records);
        partials.extend(c.partials.iter().map(|(_, r)| *r));
        if config.knobs.capture_iterations {
            logs.extend(c.logs.iter().cloned());
        }
        if first_truncation.is_none() {
            first_truncation = c.first_truncation;
        }
    }

    let completed = records.len();
    let outcome = if completed == 0 {
        empty_outcome(horizon, partials)
    } else {
        let collect = |f: fn(&TrialRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
        let (mean_cost, se_cost) = math::mean_and_se(&collect(|r| r.cost));
        let (mean_completion, se_completion) = math::mean_and_se(&collect(|r| r.completion));
        let (mean_idle, _) = math::mean_and_se(&collect(|r| r.idle));
        let per_iter = |pick: fn(&ChunkAccum) -> &Vec<f64>| -> Vec<f64> {
            (0..horizon)
                .map(|j| {
                    let vals: Vec<f64> = chunks.iter().map(|c| pick(c)[j]).collect();
                    math::pairwise_sum(&vals) / completed as f64
                })
                .collect()
        };
        SimOutcome {
            mean_cost,
            se_cost,
            mean_completion,
            se_completion,
            mean_idle,
            mean_active: per_iter(|c| &c.active_sum),
            mean_inverse_active: per_iter(|c| &c.inv_sum),
            cum_cost_mean: per_iter(|c| &c.cost_sum),
            cum_time_mean: per_iter(|c| &c.time_sum),
            truncated_trials: partials.len(),
            partial_trials: partials,
            trials: records,
            iteration_log: if config.knobs.capture_iterations {
                Some(logs)
            } else {
                None
            },
        }
    };

    if let Some((trial, iteration)) = first_truncation {
        return Err(Error::TraceTruncated {
            completed_trials: completed,
            truncated_trial: trial,
            iteration,
            partial: Box::new(outcome),
        });
    }
    Ok(outcome)
}

// aggregates are zero when no trial completed (only reachable through the
// trace-truncation error path)
fn empty_outcome(horizon: usize, partials: Vec<TrialRecord>) -> SimOutcome {
    SimOutcome {
        trials: Vec::new(),
        mean_cost: 0.0,
        se_cost: 0.0,
        mean_completion: 0.0,
        se_completion: 0.0,
        mean_idle: 0.0,
        mean_active: vec![0.0; horizon],
        mean_inverse_active: vec![0.0; horizon],
        cum_cost_mean: vec![0.0; horizon],
        cum_time_mean: vec![0.0; horizon],
        truncated_trials: partials.len(),
        partial_trials: partials,
        iteration_log: None,
    }
}

fn merge_trial(acc: &mut ChunkAccum, record: &TrialRecord, scratch: &TrialScratch, capture: bool) {
    for (j, &y) in scratch.active.iter().enumerate() {
        acc.active_sum[j] += y as f64;
        acc.inv_sum[j] += 1.0 / y as f64;
        acc.cost_sum[j] += scratch.cum_cost[j];
        acc.time_sum[j] += scratch.cum_time[j];
    }
    acc.records.push(*record);
    if capture {
        acc.logs.push(scratch.events.clone());
    }
}

/// One stage of the dynamic re-bidding strategy: group sizes to use and how
/// many iterations to run before re-optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub high_group: usize,
    pub total_workers: usize,
    pub iterations: usize,
}

/// Bids chosen at one stage, aggregated across trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBidSummary {
    pub stage: usize,
    pub start_iteration: usize,
    pub iterations: usize,
    pub high_group: usize,
    pub total_workers: usize,
    pub mean_high_bid: f64,
    pub mean_low_bid: f64,
    pub min_high_bid: f64,
    pub max_high_bid: f64,
    pub min_low_bid: f64,
    pub max_low_bid: f64,
}

/// Dynamic-strategy result: the pooled outcome plus per-stage bid summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicOutcome {
    pub outcome: SimOutcome,
    pub stages: Vec<StageBidSummary>,
}

/// Execute the dynamic re-bidding strategy: stage 1 runs under the optimal
/// two bids for the full remaining job; at every stage boundary the bids are
/// recomputed per trial with the deadline reduced by the elapsed time and
/// the iteration count set to what remains.
#[allow(clippy::too_many_arguments)]
pub fn simulate_dynamic_rebid(
    stages: &[StageSpec],
    price: &PriceModel,
    rt: &RuntimeModel,
    k: &SgdConstants,
    req: &JobRequirements,
    trials: usize,
    seed: u64,
    knobs: &SimKnobs,
) -> Result<DynamicOutcome> {
    if stages.is_empty() {
        return Err(Error::InvalidParameter("need at least one stage".into()));
    }
    if trials < 1 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    req.validate()?;
    let horizon: usize = stages.iter().map(|s| s.iterations).sum();
    if horizon == 0 {
        return Err(Error::InvalidParameter("stages hold no iterations".into()));
    }

    struct StageStats {
        b1_sum: f64,
        b2_sum: f64,
        b1_min: f64,
        b1_max: f64,
        b2_min: f64,
        b2_max: f64,
    }

    let chunk_count = trials.div_ceil(TRIAL_CHUNK);
    let results: Vec<Result<(ChunkAccum, Vec<StageStats>)>> = (0..chunk_count)
        .into_par_iter()
        .map(|chunk_idx| {
            let start = chunk_idx * TRIAL_CHUNK;
            let end = (start + TRIAL_CHUNK).min(trials);
            let mut acc = ChunkAccum::new(horizon);
            let mut stats: Vec<StageStats> = stages
                .iter()
                .map(|_| StageStats {
                    b1_sum: 0.0,
                    b2_sum: 0.0,
                    b1_min: f64::INFINITY,
                    b1_max: f64::NEG_INFINITY,
                    b2_min: f64::INFINITY,
                    b2_max: f64::NEG_INFINITY,
                })
                .collect();
            let mut scratch = TrialScratch::new();
            for trial in start..end {
                let mut rng = trial_rng(seed, trial);
                let mut record = TrialRecord {
                    cost: 0.0,
                    completion: 0.0,
                    iterations: 0,
                    idle: 0.0,
                };
                scratch.clear();
                let mut done = 0usize;
                for (si, stage) in stages.iter().enumerate() {
                    let remaining_iters: usize =
                        stages[si..].iter().map(|s| s.iterations).sum();
                    let remaining_deadline = req.deadline - record.completion;
                    let stage_req = JobRequirements {
                        target_error: req.target_error,
                        deadline: remaining_deadline,
                    };
                    if remaining_deadline <= 0.0 {
                        return Err(Error::InfeasibleDeadline {
                            required: 0.0,
                            deadline: remaining_deadline,
                        });
                    }
                    let plan = bid::optimal_two_bids(
                        &stage_req,
                        stage.high_group,
                        stage.total_workers,
                        remaining_iters,
                        k,
                        price,
                        rt,
                    )?;
                    let st = &mut stats[si];
                    st.b1_sum += plan.high_bid;
                    st.b2_sum += plan.low_bid;
                    st.b1_min = st.b1_min.min(plan.high_bid);
                    st.b1_max = st.b1_max.max(plan.high_bid);
                    st.b2_min = st.b2_min.min(plan.low_bid);
                    st.b2_max = st.b2_max.max(plan.low_bid);
                    let spec = BidSpec {
                        high_bid: plan.high_bid,
                        low_bid: plan.low_bid,
                        high_group: stage.high_group,
                        total_workers: stage.total_workers,
                        iterations: stage.iterations,
                    };
                    let source = PriceSource::Iid(price);
                    match run_bid_trial(
                        &mut rng,
                        &spec,
                        &source,
                        price,
                        rt,
                        knobs,
                        &mut record,
                        &mut scratch,
                        done,
                    ) {
                        TrialEnd::Complete => {}
                        TrialEnd::Truncated { .. } => unreachable!("iid source never truncates"),
                    }
                    done += stage.iterations;
                }
                merge_trial(&mut acc, &record, &scratch, knobs.capture_iterations);
            }
            Ok((acc, stats))
        })
        .collect();

    let mut chunks = Vec::with_capacity(results.len());
    let mut stage_totals: Vec<(f64, f64, f64, f64, f64, f64)> = stages
        .iter()
        .map(|_| (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY))
        .collect();
    for r in results {
        let (acc, stats) = r?;
        for (tot, st) in stage_totals.iter_mut().zip(stats.iter()) {
            tot.0 += st.b1_sum;
            tot.1 += st.b2_sum;
            tot.2 = tot.2.min(st.b1_min);
            tot.3 = tot.3.max(st.b1_max);
            tot.4 = tot.4.min(st.b2_min);
            tot.5 = tot.5.max(st.b2_max);
        }
        chunks.push(acc);
    }

    let mut records = Vec::with_capacity(trials);
    let mut logs = Vec::new();
    for c in &chunks {
        records.extend_from_slice(&c.records);
        if knobs.capture_iterations {
            logs.extend(c.logs.iter().cloned());
        }
    }
    let completed = records.len();
    let collect = |f: fn(&TrialRecord) -> f64| -> Vec<f64> { records.iter().map(f).collect() };
    let (mean_cost, se_cost) = math::mean_and_se(&collect(|r| r.cost));
    let (mean_completion, se_completion) = math::mean_and_se(&collect(|r| r.completion));
    let (mean_idle, _) = math::mean_and_se(&collect(|r| r.idle));
    let per_iter = |pick: fn(&ChunkAccum) -> &Vec<f64>| -> Vec<f64> {
        (0..horizon)
            .map(|j| {
                let vals: Vec<f64> = chunks.iter().map(|c| pick(c)[j]).collect();
                math::pairwise_sum(&vals) / completed as f64
            })
            .collect()
    };
    let outcome = SimOutcome {
        mean_cost,
        se_cost,
        mean_completion,
        se_completion,
        mean_idle,
        mean_active: per_iter(|c| &c.active_sum),
        mean_inverse_active: per_iter(|c| &c.inv_sum),
        cum_cost_mean: per_iter(|c| &c.cost_sum),
        cum_time_mean: per_iter(|c| &c.time_sum),
        truncated_trials: 0,
        partial_trials: Vec::new(),
        trials: records,
        iteration_log: if knobs.capture_iterations { Some(logs) } else { None },
    };

    let mut start_iteration = 0usize;
    let stage_summaries = stages
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let t = &stage_totals[si];
            let summary = StageBidSummary {
                stage: si + 1,
                start_iteration,
                iterations: s.iterations,
                high_group: s.high_group,
                total_workers: s.total_workers,
                mean_high_bid: t.0 / completed as f64,
                mean_low_bid: t.1 / completed as f64,
                min_high_bid: t.2,
                max_high_bid: t.3,
                min_low_bid: t.4,
                max_low_bid: t.5,
            };
            start_iteration += s.iterations;
            summary
        })
        .collect();

    Ok(DynamicOutcome {
        outcome,
        stages: stage_summaries,
    })
}
