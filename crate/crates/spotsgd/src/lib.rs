//! Cost-optimal bidding and provisioning for distributed synchronous SGD on
//! volatile (spot and preemptible) cloud instances.
//!
//! The crate has four layers:
//!
//! - **Models**: [`price`] (spot-price distributions with CDF / quantile /
//!   conditional-price integrals), [`runtime`] (straggler-aware iteration
//!   runtimes), and [`convergence`] (the SGD error bound under a
//!   time-varying active-worker count).
//! - **Optimizers**: [`bid`] derives deadline-tight, cost-minimal spot bids
//!   (single bid, two-group bids, co-optimized group size or iteration
//!   count); [`preemptible`] sizes worker pools and geometric worker-growth
//!   schedules when preemption cannot be controlled.
//! - **Validation**: [`sim`] is a discrete-event Monte Carlo engine that
//!   every closed form is checked against, and [`sgd`] runs real synchronous
//!   SGD on a synthetic strongly convex problem to test the error bound on
//!   actual trajectories. [`validate`] bundles the self-check suites.
//! - **Front end**: [`cli`] wires everything into one binary; [`config`]
//!   holds the flat key-value file format it shares with the library.
//!
//! Start with the `examples/` directory: each major capability has one
//! runnable example (`cargo run --example two_bid_plan`, etc.).

pub mod bid;
pub mod cli;
pub mod config;
pub mod convergence;
pub mod error;
pub mod math;
pub mod preemptible;
pub mod price;
pub mod runtime;
pub mod sgd;
pub mod sim;
pub mod validate;

pub use bid::{BidPlan, JobRequirements};
pub use convergence::{InverseMomentSeq, SgdConstants};
pub use error::{Error, Result};
pub use preemptible::{PreemptionKind, PreemptionLaw, ProvisionPlan, WorkerSchedule};
pub use price::{PriceModel, PriceTrace};
pub use runtime::RuntimeModel;
pub use sim::{SimConfig, SimOutcome, SimPlan};
