//! Value iteration and finite-horizon backward DP over guarded tables.
//!
//! Both solvers iterate the same synchronous Bellman sweep from the zero
//! vector. Because the horizon-`H` DP value with zero terminal condition is
//! exactly the `H`-th sweep iterate, one incremental pass from zero yields
//! every requested finite-horizon checkpoint and then continues to the
//! fixed point, sharing all the work. The recorded policy at sweep `H` is
//! the greedy policy against the sweep-`(H−1)` values, which is the DP
//! stage-0 policy for horizon `H`.

use crate::parallel::{self, ExecMode};
use crate::planner::grid::GridSpec;
use crate::planner::rollout::{offgrid_rollout, RolloutOptions, ScheduledPopulation};
use crate::planner::table::GuardedTable;
use crate::params::{SystemParams, SystemState};
use thiserror::Error;

/// Converged or fixed-horizon values with their greedy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSolution {
    /// Value per state index.
    pub values: Vec<f64>,
    /// Greedy action index per state (ties toward the smaller index).
    pub policy: Vec<u32>,
}

/// Value iteration output.
#[derive(Debug, Clone, PartialEq)]
pub struct ViResult {
    pub plan: PlanSolution,
    /// Sweeps executed before the stopping rule fired.
    pub sweeps: u32,
    /// Post-hoc Bellman residual measured by one extra sweep.
    pub residual: f64,
    /// Sup-norm change after every sweep, for contraction diagnostics.
    pub sup_changes: Vec<f64>,
}

/// A finite-horizon snapshot taken during the incremental pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub h: u32,
    pub plan: PlanSolution,
}

/// All requested DP checkpoints plus the converged solution.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementalPlan {
    pub checkpoints: Vec<Checkpoint>,
    pub vi: ViResult,
}

/// The sweep limit was reached before the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("value iteration did not converge in {sweeps} sweeps (last residual {residual:e})")]
pub struct NoConvergence {
    pub sweeps: u32,
    pub residual: f64,
}

/// One synchronous Bellman sweep: `v_new(s) = max_a [r + γ·v_old(next)]`,
/// recording the argmax with ties broken toward the smaller action index.
fn sweep(
    table: &GuardedTable,
    gamma: f64,
    v_old: &[f64],
    v_new: &mut [f64],
    policy: &mut [u32],
    mode: ExecMode,
) {
    let n_actions = table.n_actions;
    parallel::fill_pair(mode, v_new, policy, |state| {
        let base = state * n_actions;
        let mut best = f64::NEG_INFINITY;
        let mut best_action = 0u32;
        for action in 0..n_actions {
            let pair = base + action;
            let value = table.reward[pair] + gamma * v_old[table.next_index[pair] as usize];
            if value > best {
                best = value;
                best_action = action as u32;
            }
        }
        (best, best_action)
    });
}

/// Runs sweeps from zero, snapshotting at the requested horizons, until the
/// sup-norm change drops to `tol` (and all checkpoints are recorded).
pub fn plan_incremental(
    table: &GuardedTable,
    gamma: f64,
    checkpoint_horizons: &[u32],
    tol: f64,
    max_sweeps: u32,
    mode: ExecMode,
) -> Result<IncrementalPlan, NoConvergence> {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0,1)");
    let mut horizons: Vec<u32> = checkpoint_horizons.to_vec();
    horizons.sort_unstable();
    horizons.dedup();

    let n = table.n_states;
    let mut v_old = vec![0.0f64; n];
    let mut v_new = vec![0.0f64; n];
    let mut policy = vec![0u32; n];
    let mut checkpoints = Vec::with_capacity(horizons.len());
    let mut sup_changes = Vec::new();
    let mut sweeps = 0u32;

    loop {
        sweep(table, gamma, &v_old, &mut v_new, &mut policy, mode);
        sweeps += 1;
        let change = parallel::sup_abs_diff(mode, &v_new, &v_old);
        sup_changes.push(change);
        std::mem::swap(&mut v_old, &mut v_new);
        if horizons.binary_search(&sweeps).is_ok() {
            checkpoints.push(Checkpoint {
                h: sweeps,
                plan: PlanSolution {
                    values: v_old.clone(),
                    policy: policy.clone(),
                },
            });
        }
        let pending = horizons.last().is_some_and(|&last| sweeps < last);
        if change <= tol && !pending {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(NoConvergence {
                sweeps,
                residual: change,
            });
        }
    }

    // one extra sweep pairs the converged values with their greedy policy
    // and measures the post-hoc Bellman residual
    sweep(table, gamma, &v_old, &mut v_new, &mut policy, mode);
    let residual = parallel::sup_abs_diff(mode, &v_new, &v_old);
    Ok(IncrementalPlan {
        checkpoints,
        vi: ViResult {
            plan: PlanSolution {
                values: v_old,
                policy,
            },
            sweeps,
            residual,
            sup_changes,
        },
    })
}

/// Infinite-horizon value iteration to a sup-norm tolerance.
pub fn value_iteration(
    table: &GuardedTable,
    gamma: f64,
    tol: f64,
    max_sweeps: u32,
    mode: ExecMode,
) -> Result<ViResult, NoConvergence> {
    plan_incremental(table, gamma, &[], tol, max_sweeps, mode).map(|plan| plan.vi)
}

/// Horizon-`H` backward DP with zero terminal values; returns the stage-0
/// values and the stage-0 greedy policy.
pub fn backward_dp(table: &GuardedTable, gamma: f64, h: u32, mode: ExecMode) -> PlanSolution {
    assert!(h >= 1, "backward DP needs at least one stage");
    let mut stages = backward_dp_stages(table, gamma, h, mode);
    let values = std::mem::take(&mut stages.values);
    let policy = stages
        .stage_policies
        .into_iter()
        .next()
        .expect("h >= 1 produces at least one stage policy");
    PlanSolution { values, policy }
}

/// Full non-stationary DP solution: `stage_policies[t]` is the greedy
/// policy for stage `t` of the horizon-`h` problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DpStages {
    /// Stage-0 values `V_0^{(h)}`.
    pub values: Vec<f64>,
    /// Policies for stages `0..h`; stage `h−1` is greedy against zero.
    pub stage_policies: Vec<Vec<u32>>,
}

pub fn backward_dp_stages(table: &GuardedTable, gamma: f64, h: u32, mode: ExecMode) -> DpStages {
    assert!(h >= 1, "backward DP needs at least one stage");
    let n = table.n_states;
    let mut v_old = vec![0.0f64; n];
    let mut v_new = vec![0.0f64; n];
    let mut policy = vec![0u32; n];
    // sweep k computes V^(k) = T V^(k−1); its policy belongs to stage h−k
    let mut reversed: Vec<Vec<u32>> = Vec::with_capacity(h as usize);
    for _ in 0..h {
        sweep(table, gamma, &v_old, &mut v_new, &mut policy, mode);
        std::mem::swap(&mut v_old, &mut v_new);
        reversed.push(policy.clone());
    }
    reversed.reverse();
    DpStages {
        values: v_old,
        stage_policies: reversed,
    }
}

/// Geometric truncation bound `γ^H·R_max/(1−γ)`.
pub fn truncation_bound(table: &GuardedTable, gamma: f64, h: u32) -> f64 {
    gamma.powi(h as i32) * table.r_max / (1.0 - gamma)
}

/// Relative value gap with an epsilon-floored denominator.
pub fn gap_rel(v_inf: f64, v_h: f64) -> f64 {
    (v_inf - v_h).abs() / v_inf.abs().max(1e-12)
}

/// Mean relative off-grid return gap between two policies over shared
/// initial states.
pub fn gap_off(
    grid: &GridSpec,
    policy_a: &[u32],
    policy_b: &[u32],
    starts: &[SystemState],
    sched: &ScheduledPopulation,
    params: &SystemParams,
    opts: &RolloutOptions,
) -> f64 {
    assert!(!starts.is_empty(), "gap_off needs at least one start");
    let mut total = 0.0;
    for s0 in starts {
        let ja = offgrid_rollout(grid, |_, si| policy_a[si] as usize, *s0, sched, params, opts)
            .discounted_return;
        let jb = offgrid_rollout(grid, |_, si| policy_b[si] as usize, *s0, sched, params, opts)
            .discounted_return;
        total += (ja - jb).abs() / ja.abs().max(1e-12);
    }
    total / starts.len() as f64
}
