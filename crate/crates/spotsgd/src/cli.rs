//! Command-line front end: trace ingestion, the bid and provisioning
//! optimizers, the Monte Carlo simulator, and the self-check suites. One
//! subcommand per operation; every run emits a manifest sidecar so reruns
//! are reproducible byte for byte.
//!
//! Exit codes: 0 success, 2 usage or input parse error, 3 infeasible
//! deadline, 4 error floor / infeasible target, 5 inverse-moment budget out
//! of range, 6 trace truncation, 7 internal check failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bid::{self, BidPlan, JobRequirements};
use crate::config;
use crate::convergence::SgdConstants;
use crate::error::{Error, Result};
use crate::preemptible::{self, GrowthRuntime, ProvisionPlan, ProvisionPoint, WorkerSchedule};
use crate::price::{self, PriceModel, PriceTrace};
use crate::runtime::RuntimeModel;
use crate::sim::{self, PriceMode, SimConfig, SimKnobs, SimOutcome, SimPlan};
use crate::validate;

/// Environment variable supplying the default seed.
pub const SEED_ENV: &str = "SPOTSGD_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "spotsgd",
    version,
    about = "Cost-optimal bidding and provisioning for distributed SGD on volatile cloud instances"
)]
struct Cli {
    /// Cap the worker threads used by parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a price model from a trace or parameters and write it to a file.
    FitPrices(FitPricesArgs),
    /// Optimal single bid for all workers (deadline-tight, minimal cost).
    OptimalBid(OptimalBidArgs),
    /// Optimal two-group bids, optionally co-optimizing the group split or
    /// the iteration count.
    OptimalTwoBids(OptimalTwoBidsArgs),
    /// Jointly size the worker pool and iteration count for preemptible
    /// instances.
    OptimizeWorkers(OptimizeWorkersArgs),
    /// Optimize the geometric worker-growth rate for preemptible instances.
    OptimizeEta(OptimizeEtaArgs),
    /// Monte Carlo simulation of a plan.
    Simulate(SimulateArgs),
    /// Run a self-check suite.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PriceKind {
    Uniform,
    Gaussian,
    Empirical,
}

#[derive(Args, Debug, Clone, Serialize)]
struct PriceArgs {
    /// Price model family.
    #[arg(long, value_enum, default_value = "uniform")]
    price_kind: PriceKind,
    /// Support lower bound.
    #[arg(long, default_value_t = 0.2)]
    price_lower: f64,
    /// Support upper bound.
    #[arg(long, default_value_t = 1.0)]
    price_upper: f64,
    /// Gaussian location parameter.
    #[arg(long, default_value_t = 0.6)]
    price_mean: f64,
    /// Gaussian spread parameter, read as a variance unless --spread-is-std.
    #[arg(long, default_value_t = 0.175)]
    price_spread: f64,
    /// Interpret --price-spread as a standard deviation.
    #[arg(long)]
    spread_is_std: bool,
    /// CSV price trace (`timestamp,price`); required for the empirical kind.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl PriceArgs {
    fn build(&self) -> Result<(PriceModel, Option<PriceTrace>)> {
        let trace = match &self.trace {
            Some(path) => Some(PriceTrace::load_csv(path)?),
            None => None,
        };
        let model = match self.price_kind {
            PriceKind::Uniform => price::make_uniform(self.price_lower, self.price_upper)?,
            PriceKind::Gaussian => {
                let variance = if self.spread_is_std {
                    self.price_spread * self.price_spread
                } else {
                    self.price_spread
                };
                price::make_truncated_gaussian(
                    self.price_mean,
                    variance,
                    self.price_lower,
                    self.price_upper,
                )?
            }
            PriceKind::Empirical => {
                let trace = trace.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("empirical price model needs --trace".into())
                })?;
                price::fit_empirical(trace)?
            }
        };
        Ok((model, trace))
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum RuntimeFamily {
    Exponential,
    ShiftedExponential,
    Deterministic,
}

#[derive(Args, Debug, Clone, Serialize)]
struct RuntimeArgs {
    /// Per-worker gradient time family.
    #[arg(long, value_enum, default_value = "exponential")]
    runtime_family: RuntimeFamily,
    /// Rate of the exponential component (1/seconds).
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Deterministic floor of the shifted-exponential family (seconds).
    #[arg(long, default_value_t = 0.0)]
    shift: f64,
    /// Per-worker time of the deterministic family (seconds).
    #[arg(long, default_value_t = 1.0)]
    fixed_time: f64,
    /// Server aggregation overhead per iteration (seconds).
    #[arg(long, default_value_t = 0.0)]
    overhead: f64,
}

impl RuntimeArgs {
    fn build(&self, overrides: &BTreeMap<String, String>) -> Result<RuntimeModel> {
        if overrides.contains_key("runtime_family") {
            return config::runtime_model_from_map(overrides);
        }
        let model = match self.runtime_family {
            RuntimeFamily::Exponential => RuntimeModel::Exponential {
                rate: self.rate,
                overhead: self.overhead,
            },
            RuntimeFamily::ShiftedExponential => RuntimeModel::ShiftedExponential {
                shift: self.shift,
                rate: self.rate,
                overhead: self.overhead,
            },
            RuntimeFamily::Deterministic => RuntimeModel::Deterministic {
                time: self.fixed_time,
                overhead: self.overhead,
            },
        };
        model.validate()?;
        Ok(model)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
struct ConstantsArgs {
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 1.0)]
    strong_convexity: f64,
    #[arg(long, default_value_t = 1.0)]
    moment_lower: f64,
    #[arg(long, default_value_t = 1.0)]
    moment_upper: f64,
    #[arg(long, default_value_t = 1.0)]
    variance_offset: f64,
    #[arg(long, default_value_t = 0.0)]
    variance_scalar: f64,
    #[arg(long, default_value_t = 0.1)]
    step_size: f64,
    #[arg(long, default_value_t = 1.0)]
    initial_gap: f64,
}

impl ConstantsArgs {
    fn build(&self, overrides: &BTreeMap<String, String>) -> Result<SgdConstants> {
        if overrides.contains_key("lipschitz") {
            return config::sgd_constants_from_map(overrides);
        }
        let k = SgdConstants {
            lipschitz: self.lipschitz,
            strong_convexity: self.strong_convexity,
            moment_lower: self.moment_lower,
            moment_upper: self.moment_upper,
            variance_offset: self.variance_offset,
            variance_scalar: self.variance_scalar,
            step_size: self.step_size,
            initial_gap: self.initial_gap,
        };
        k.validate()?;
        Ok(k)
    }
}

/// Shared plumbing flags: config file, seed, manifest path.
#[derive(Args, Debug, Clone, Serialize)]
struct CommonArgs {
    /// Flat key-value config file; its keys override the matching flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// RNG seed (defaults to $SPOTSGD_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Manifest sidecar path (defaults next to --out, else `spotsgd-manifest.json`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

impl CommonArgs {
    fn overrides(&self) -> Result<BTreeMap<String, String>> {
        match &self.config {
            Some(path) => config::parse_flat(&std::fs::read_to_string(path)?),
            None => Ok(BTreeMap::new()),
        }
    }

    fn seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            std::env::var(SEED_ENV)
                .ok()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0)
        })
    }

    fn manifest_path(&self, out: Option<&Path>) -> PathBuf {
        if let Some(p) = &self.manifest {
            return p.clone();
        }
        match out {
            Some(o) => {
                let mut name = o.file_stem().unwrap_or_default().to_os_string();
                name.push(".manifest.json");
                o.with_file_name(name)
            }
            None => PathBuf::from("spotsgd-manifest.json"),
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct FitPricesArgs {
    #[command(flatten)]
    price: PriceArgs,
    /// Where to write the fitted model JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Serialize)]
struct OptimalBidArgs {
    /// Target expected optimality gap.
    #[arg(long)]
    target_error: f64,
    /// Wall-clock deadline in seconds.
    #[arg(long)]
    deadline: f64,
    /// Worker count.
    #[arg(long)]
    workers: usize,
    #[command(flatten)]
    price: PriceArgs,
    #[command(flatten)]
    runtime: RuntimeArgs,
    #[command(flatten)]
    constants: ConstantsArgs,
    /// Also write the plan JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
enum CoOptimize {
    None,
    Group,
    Iterations,
}

#[derive(Args, Debug, Serialize)]
struct OptimalTwoBidsArgs {
    #[arg(long)]
    target_error: f64,
    #[arg(long)]
    deadline: f64,
    /// Total worker count n.
    #[arg(long)]
    workers: usize,
    /// High-bid group size n1 (ignored when co-optimizing the group).
    #[arg(long, default_value_t = 1)]
    high_group: usize,
    /// Iteration count J (ignored when co-optimizing iterations).
    #[arg(long, default_value_t = 0)]
    iterations: usize,
    /// Search over the group split or the iteration count.
    #[arg(long, value_enum, default_value = "none")]
    co_optimize: CoOptimize,
    #[command(flatten)]
    price: PriceArgs,
    #[command(flatten)]
    runtime: RuntimeArgs,
    #[command(flatten)]
    constants: ConstantsArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Serialize)]
struct OptimizeWorkersArgs {
    #[arg(long)]
    target_error: f64,
    #[arg(long)]
    deadline: f64,
    /// Iterations completed per second of deadline (delta).
    #[arg(long)]
    iter_rate: f64,
    /// Inverse-moment coefficient d with E[1/y] <= d/n.
    #[arg(long)]
    coeff: f64,
    #[command(flatten)]
    constants: ConstantsArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Serialize)]
struct OptimizeEtaArgs {
    #[arg(long)]
    target_error: f64,
    #[arg(long)]
    deadline: f64,
    #[arg(long)]
    initial_workers: usize,
    /// Per-worker preemption probability per iteration.
    #[arg(long)]
    preempt_prob: f64,
    /// Inverse-moment power-law exponent chi.
    #[arg(long, default_value_t = 1.0)]
    chi: f64,
    /// Inverse-moment coefficient d.
    #[arg(long, default_value_t = 1.0)]
    coeff: f64,
    /// Fixed iteration count (scanned upward instead when --joint).
    #[arg(long, default_value_t = 50)]
    iterations: usize,
    /// Jointly optimize the iteration count and the growth rate.
    #[arg(long)]
    joint: bool,
    /// Constant per-iteration runtime in seconds.
    #[arg(long, default_value_t = 1.0)]
    runtime_constant: f64,
    /// Use the straggler runtime (log n)/rate instead of the constant.
    #[arg(long)]
    straggler_rate: Option<f64>,
    /// Upper end of the growth-rate search interval.
    #[arg(long, default_value_t = 8.0)]
    eta_cap: f64,
    #[command(flatten)]
    constants: ConstantsArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    /// Plan document produced by an optimizer command.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Inline bid plan (ignored with --plan): high bid.
    #[arg(long)]
    high_bid: Option<f64>,
    #[arg(long)]
    low_bid: Option<f64>,
    #[arg(long, default_value_t = 1)]
    high_group: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    /// No-interruptions baseline: bid above any possible price.
    #[arg(long)]
    baseline: bool,
    /// Preemptible mode with this per-iteration preemption probability.
    #[arg(long)]
    preempt_prob: Option<f64>,
    /// Stable unit price for preemptible mode.
    #[arg(long, default_value_t = 1.0)]
    unit_price: f64,
    /// Geometric growth rate of the preemptible schedule (static if absent).
    #[arg(long)]
    growth: Option<f64>,
    /// Replay this CSV trace instead of i.i.d. price draws.
    #[arg(long)]
    replay_trace: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    /// Clock advance per idle period (seconds).
    #[arg(long, default_value_t = 4.0)]
    redraw_interval: f64,
    /// Idle periods last a drawn would-be iteration duration instead of the
    /// fixed interval (matches the closed-form completion model).
    #[arg(long)]
    idle_slot_runtime: bool,
    /// Re-read the price mid-iteration; a rise aborts and restarts the
    /// iteration (stress mode).
    #[arg(long)]
    mid_iteration_redraw: bool,
    #[command(flatten)]
    price: PriceArgs,
    #[command(flatten)]
    runtime: RuntimeArgs,
    /// Aggregate JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial CSV output path.
    #[arg(long)]
    trials_csv: Option<PathBuf>,
    /// Per-iteration trajectory CSV output path.
    #[arg(long)]
    trajectory_csv: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Debug, Serialize)]
struct ValidateArgs {
    /// Suite: formulas, bounds, optimizers, or all.
    #[arg(long, default_value = "all")]
    suite: String,
    /// Summary CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// Echo of the inputs an optimizer resolved, embedded in its plan document
/// so `simulate --plan` can re-create the same models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanInputs {
    pub target_error: f64,
    pub deadline: f64,
    pub price: PriceModel,
    pub runtime: RuntimeModel,
    pub constants: SgdConstants,
}

/// Optimizer output: the plan plus the resolved inputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanDocument {
    pub plan: BidPlan,
    pub inputs: PlanInputs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WorkersDocument {
    point: ProvisionPoint,
    inputs: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EtaDocument {
    plan: ProvisionPlan,
    inputs: serde_json::Value,
}

/// Run manifest: everything needed to reproduce a run byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub input_digests: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

fn digest_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: serde_json::Value,
    seed: u64,
    inputs: &[&PathBuf],
    outputs: &[&PathBuf],
) -> Result<()> {
    let mut input_digests = BTreeMap::new();
    for p in inputs {
        input_digests.insert(p.display().to_string(), digest_file(p)?);
    }
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        input_digests,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    write_json(path, &manifest)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn to_stdout_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Entry point: parse `std::env::args`, run, and return the exit code.
pub fn run() -> i32 {
    run_from(std::env::args())
}

/// Testable entry point.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage/version text
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(threads) = cli.threads {
        // best effort; a second invocation in-process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let result = match cli.command {
        Command::FitPrices(args) => cmd_fit_prices(args),
        Command::OptimalBid(args) => cmd_optimal_bid(args),
        Command::OptimalTwoBids(args) => cmd_optimal_two_bids(args),
        Command::OptimizeWorkers(args) => cmd_optimize_workers(args),
        Command::OptimizeEta(args) => cmd_optimize_eta(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InfeasibleDeadline { .. } => 3,
        Error::ErrorFloor { .. } | Error::InfeasibleTarget { .. } => 4,
        Error::QRange { .. } => 5,
        Error::TraceTruncated { .. } => 6,
        Error::InternalCheck(_) => 7,
        Error::Infeasible(_) => 3,
        _ => 2,
    }
}

fn cmd_fit_prices(args: FitPricesArgs) -> Result<()> {
    let (model, _) = args.price.build()?;
    write_json(&args.out, &model)?;
    let deciles: Vec<f64> = (1..=9).map(|i| model.quantile(i as f64 / 10.0)).collect();
    println!(
        "support [{}, {}], mean {}, deciles {}",
        model.lower_bound(),
        model.upper_bound(),
        model.mean(),
        deciles
            .iter()
            .map(|d| format!("{d:.6}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    let manifest_path = args.common.manifest_path(Some(&args.out));
    let inputs: Vec<&PathBuf> = args.price.trace.iter().collect();
    write_manifest(
        &manifest_path,
        "fit-prices",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &inputs,
        &[&args.out],
    )
}

fn plan_document(
    plan: BidPlan,
    target_error: f64,
    deadline: f64,
    price: PriceModel,
    runtime: RuntimeModel,
    constants: SgdConstants,
) -> PlanDocument {
    PlanDocument {
        plan,
        inputs: PlanInputs {
            target_error,
            deadline,
            price,
            runtime,
            constants,
        },
    }
}

fn emit_plan(doc: &PlanDocument, out: Option<&PathBuf>) -> Result<()> {
    to_stdout_json(doc)?;
    if let Some(path) = out {
        write_json(path, doc)?;
    }
    Ok(())
}

fn cmd_optimal_bid(args: OptimalBidArgs) -> Result<()> {
    let overrides = args.common.overrides()?;
    let (price_model, _) = args.price.build()?;
    let runtime = args.runtime.build(&overrides)?;
    let constants = args.constants.build(&overrides)?;
    let req = JobRequirements {
        target_error: args.target_error,
        deadline: args.deadline,
    };
    let plan = bid::optimal_uniform_bid(&req, args.workers, &constants, &price_model, &runtime)?;
    let doc = plan_document(
        plan,
        args.target_error,
        args.deadline,
        price_model,
        runtime,
        constants,
    );
    emit_plan(&doc, args.out.as_ref())?;
    let manifest_path = args.common.manifest_path(args.out.as_deref());
    let mut inputs: Vec<&PathBuf> = args.price.trace.iter().collect();
    inputs.extend(args.common.config.iter());
    let outputs: Vec<&PathBuf> = args.out.iter().collect();
    write_manifest(
        &manifest_path,
        "optimal-bid",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &inputs,
        &outputs,
    )
}

fn cmd_optimal_two_bids(args: OptimalTwoBidsArgs) -> Result<()> {
    let overrides = args.common.overrides()?;
    let (price_model, _) = args.price.build()?;
    let runtime = args.runtime.build(&overrides)?;
    let constants = args.constants.build(&overrides)?;
    let req = JobRequirements {
        target_error: args.target_error,
        deadline: args.deadline,
    };
    let plan = match args.co_optimize {
        CoOptimize::None => {
            if args.iterations == 0 {
                return Err(Error::InvalidParameter(
                    "--iterations is required unless co-optimizing iterations".into(),
                ));
            }
            bid::optimal_two_bids(
                &req,
                args.high_group,
                args.workers,
                args.iterations,
                &constants,
                &price_model,
                &runtime,
            )?
        }
        CoOptimize::Group => {
            if args.iterations == 0 {
                return Err(Error::InvalidParameter(
                    "--iterations is required when co-optimizing the group split".into(),
                ));
            }
            bid::co_optimize_group_size(
                &req,
                args.workers,
                args.iterations,
                &constants,
                &price_model,
                &runtime,
            )?
        }
        CoOptimize::Iterations => bid::co_optimize_iterations(
            &req,
            args.high_group,
            args.workers,
            &constants,
            &price_model,
            &runtime,
        )?,
    };
    let doc = plan_document(
        plan,
        args.target_error,
        args.deadline,
        price_model,
        runtime,
        constants,
    );
    emit_plan(&doc, args.out.as_ref())?;
    let manifest_path = args.common.manifest_path(args.out.as_deref());
    let mut inputs: Vec<&PathBuf> = args.price.trace.iter().collect();
    inputs.extend(args.common.config.iter());
    let outputs: Vec<&PathBuf> = args.out.iter().collect();
    write_manifest(
        &manifest_path,
        "optimal-two-bids",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &inputs,
        &outputs,
    )
}

fn cmd_optimize_workers(args: OptimizeWorkersArgs) -> Result<()> {
    let overrides = args.common.overrides()?;
    let constants = args.constants.build(&overrides)?;
    let point = preemptible::co_optimize_workers_iterations(
        &constants,
        args.target_error,
        args.deadline,
        args.iter_rate,
        args.coeff,
    )?;
    let doc = WorkersDocument {
        point,
        inputs: serde_json::to_value(&args)?,
    };
    to_stdout_json(&doc)?;
    if let Some(path) = &args.out {
        write_json(path, &doc)?;
    }
    let manifest_path = args.common.manifest_path(args.out.as_deref());
    let inputs: Vec<&PathBuf> = args.common.config.iter().collect();
    let outputs: Vec<&PathBuf> = args.out.iter().collect();
    write_manifest(
        &manifest_path,
        "optimize-workers",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &inputs,
        &outputs,
    )
}

fn cmd_optimize_eta(args: OptimizeEtaArgs) -> Result<()> {
    let overrides = args.common.overrides()?;
    let constants = args.constants.build(&overrides)?;
    let rt = match args.straggler_rate {
        Some(rate) => GrowthRuntime::Straggler { rate },
        None => GrowthRuntime::Constant {
            seconds: args.runtime_constant,
        },
    };
    let sol = if args.joint {
        preemptible::optimize_eta_joint(
            &constants,
            args.initial_workers,
            args.preempt_prob,
            args.chi,
            &rt,
            args.deadline,
            args.target_error,
            args.coeff,
            args.eta_cap,
        )?
    } else {
        preemptible::optimize_eta(
            &constants,
            args.initial_workers,
            args.preempt_prob,
            args.chi,
            args.iterations,
            &rt,
            args.deadline,
            args.target_error,
            args.coeff,
            args.eta_cap,
        )?
    };
    let doc = EtaDocument {
        plan: ProvisionPlan::from_solution(&sol, args.initial_workers),
        inputs: serde_json::to_value(&args)?,
    };
    to_stdout_json(&doc)?;
    if let Some(path) = &args.out {
        write_json(path, &doc)?;
    }
    let manifest_path = args.common.manifest_path(args.out.as_deref());
    let inputs: Vec<&PathBuf> = args.common.config.iter().collect();
    let outputs: Vec<&PathBuf> = args.out.iter().collect();
    write_manifest(
        &manifest_path,
        "optimize-eta",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &inputs,
        &outputs,
    )
}

fn write_trials_csv(path: &Path, outcome: &SimOutcome) -> Result<()> {
    let mut text = String::from("trial,cost,completion,iterations,idle\n");
    for (i, t) in outcome.trials.iter().enumerate() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            i, t.cost, t.completion, t.iterations, t.idle
        ));
    }
    for (i, t) in outcome.partial_trials.iter().enumerate() {
        text.push_str(&format!(
            "partial-{},{},{},{},{}\n",
            i, t.cost, t.completion, t.iterations, t.idle
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_trajectory_csv(path: &Path, outcome: &SimOutcome) -> Result<()> {
    let mut text = String::from("iter,mean_active,mean_inverse_active,cum_cost_mean,cum_time_mean\n");
    for j in 0..outcome.horizon() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            j + 1,
            outcome.mean_active[j],
            outcome.mean_inverse_active[j],
            outcome.cum_cost_mean[j],
            outcome.cum_time_mean[j]
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (mut price_model, _) = args.price.build()?;
    let overrides = args.common.overrides()?;
    let mut runtime = args.runtime.build(&overrides)?;

    let plan = if let Some(plan_path) = &args.plan {
        let doc: PlanDocument = serde_json::from_str(&std::fs::read_to_string(plan_path)?)?;
        price_model = doc.inputs.price;
        runtime = doc.inputs.runtime;
        SimPlan::Bid {
            high_bid: doc.plan.high_bid,
            low_bid: doc.plan.low_bid,
            high_group: doc.plan.high_group,
            total_workers: doc.plan.total_workers,
            iterations: doc.plan.iterations,
        }
    } else if args.baseline {
        SimPlan::NoInterruptions {
            workers: args.workers,
            iterations: args.iterations,
        }
    } else if let Some(q) = args.preempt_prob {
        let schedule = match args.growth {
            Some(eta) => WorkerSchedule::Geometric {
                initial_workers: args.workers,
                growth: eta,
                iterations: args.iterations,
            },
            None => WorkerSchedule::Static {
                workers: args.workers,
                iterations: args.iterations,
            },
        };
        SimPlan::Preemptible {
            schedule,
            preempt_prob: q,
            unit_price: args.unit_price,
        }
    } else {
        let high = args.high_bid.ok_or_else(|| {
            Error::InvalidParameter(
                "provide --plan, --baseline, --preempt-prob, or --high-bid".into(),
            )
        })?;
        SimPlan::Bid {
            high_bid: high,
            low_bid: args.low_bid.unwrap_or(high),
            high_group: args.high_group,
            total_workers: args.workers,
            iterations: args.iterations,
        }
    };

    let price_mode = match &args.replay_trace {
        Some(path) => PriceMode::TraceReplay(PriceTrace::load_csv(path)?),
        None => PriceMode::IidRedraw,
    };
    let config = SimConfig {
        plan,
        price: price_model,
        price_mode,
        runtime,
        knobs: SimKnobs {
            redraw_interval: args.redraw_interval,
            idle_slot_runtime: args.idle_slot_runtime,
            price_fixed_within_iteration: !args.mid_iteration_redraw,
            capture_iterations: false,
        },
        trials: args.trials,
        seed: args.common.seed(),
    };

    let emit = |outcome: &SimOutcome| -> Result<()> {
        if let Some(path) = &args.out {
            write_json(path, outcome)?;
        }
        if let Some(path) = &args.trials_csv {
            write_trials_csv(path, outcome)?;
        }
        if let Some(path) = &args.trajectory_csv {
            write_trajectory_csv(path, outcome)?;
        }
        println!(
            "mean cost {:.6}, mean completion {:.6} s, trials {} (truncated {})",
            outcome.mean_cost,
            outcome.mean_completion,
            outcome.trials.len(),
            outcome.truncated_trials
        );
        Ok(())
    };

    let manifest = |outputs: Vec<&PathBuf>| -> Result<()> {
        let manifest_path = args.common.manifest_path(args.out.as_deref());
        let mut inputs: Vec<&PathBuf> = args.price.trace.iter().collect();
        inputs.extend(args.replay_trace.iter());
        inputs.extend(args.plan.iter());
        inputs.extend(args.common.config.iter());
        write_manifest(
            &manifest_path,
            "simulate",
            serde_json::to_value(&args)?,
            args.common.seed(),
            &inputs,
            &outputs,
        )
    };
    let outputs: Vec<&PathBuf> = args
        .out
        .iter()
        .chain(args.trials_csv.iter())
        .chain(args.trajectory_csv.iter())
        .collect();

    match sim::simulate(&config) {
        Ok(outcome) => {
            emit(&outcome)?;
            manifest(outputs)
        }
        Err(Error::TraceTruncated {
            completed_trials,
            truncated_trial,
            iteration,
            partial,
        }) => {
            // write what completed, then report the truncation
            emit(&partial)?;
            manifest(outputs)?;
            Err(Error::TraceTruncated {
                completed_trials,
                truncated_trial,
                iteration,
                partial,
            })
        }
        Err(e) => Err(e),
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    let results = validate::run_suite(&args.suite, args.common.seed())?;
    let mut failures = 0usize;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} [{}] {} — {}", r.suite, r.name, r.detail);
        if !r.passed {
            failures += 1;
        }
    }
    println!(
        "{} checks, {} failed",
        results.len(),
        failures
    );
    if let Some(path) = &args.out {
        std::fs::write(path, validate::results_csv(&results))?;
    }
    let manifest_path = args.common.manifest_path(args.out.as_deref());
    let outputs: Vec<&PathBuf> = args.out.iter().collect();
    write_manifest(
        &manifest_path,
        "validate",
        serde_json::to_value(&args)?,
        args.common.seed(),
        &[],
        &outputs,
    )?;
    if failures > 0 {
        return Err(Error::InternalCheck(format!("{failures} checks failed")));
    }
    Ok(())
}
