//! Closed-loop GPU pricing and autoscaling model.
//!
//! A provider posts a unit price and a capacity target each epoch; a
//! population of mean-field tenant types responds with equilibrium demand
//! that worsens with queueing delay. Capacity follows the target through a
//! provisioning pipeline with activation, cancellation, and scale-down
//! frictions. The crate provides:
//!
//! - the stage equilibrium demand map and its structural quantities
//!   ([`demand`]),
//! - the one-epoch transition and reward ([`dynamics`]),
//! - the drainability guardrail: certificates, safe-price map, and the
//!   action shield ([`guardrail`]),
//! - grid-based planning: guarded transition tables, value iteration,
//!   finite-horizon backward induction, and off-grid rollouts ([`planner`]),
//! - shielded tabular Q-learning with safety logging ([`rl`]),
//! - the experiment harness: config files, experiment drivers, CSV output
//!   ([`config`], [`experiments`]).
//!
//! Heavy kernels (table construction, synchronous value sweeps) run
//! data-parallel under the default `parallel` feature and sequentially
//! without it; both paths produce bit-identical results.

pub mod config;
pub mod demand;
pub mod dynamics;
pub mod experiments;
pub mod guardrail;
pub mod params;
pub mod parallel;
pub mod planner;
pub mod rl;

pub use params::{
    LeaderAction, Population, PopulationError, RangeError, Slo, SystemParams, SystemState,
    TenantType,
};
