//! Grid planning: discretization, guarded tables, value iteration,
//! finite-horizon backward DP, and off-grid policy execution.

pub mod grid;
pub mod persist;
pub mod rollout;
pub mod solve;
pub mod table;

pub use grid::{build_grid, build_grid_with, GridConfig, GridSpec, SpecError};
pub use persist::{load_plans, load_table, save_plans, save_table, PersistError};
pub use rollout::{offgrid_rollout, Rollout, RolloutOptions, ScheduledPopulation, StepRecord};
pub use solve::{
    backward_dp, backward_dp_stages, gap_off, gap_rel, plan_incremental, truncation_bound,
    value_iteration, Checkpoint, IncrementalPlan, NoConvergence, PlanSolution, ViResult,
};
pub use table::{build_table, build_table_mode, GuardedTable};
