//! Off-grid policy execution on the continuous dynamics.
//!
//! Policies live on the grid; execution does not. At every step the current
//! continuous state is matched to its nearest grid state only to look up an
//! action, the action is (optionally) shielded against the current
//! continuous state, and the dynamics advance without projection. The
//! optional projected mode replays the table's own evolution for the
//! on-grid consistency checks. A demand schedule supports the burst test's
//! time-varying utility weights; the shield certificate is recomputed under
//! the scheduled population each step.

use crate::dynamics;
use crate::guardrail::{self, SafePrice, ShieldMode};
use crate::params::{LeaderAction, Population, SystemParams, SystemState};
use crate::planner::grid::GridSpec;

/// Population under a demand schedule, precomputed per regime.
#[derive(Debug, Clone)]
pub struct ScheduledPopulation {
    base: Population,
    burst: Option<Burst>,
}

#[derive(Debug, Clone)]
struct Burst {
    scaled: Population,
    factor: f64,
    t_start: usize,
    t_end: usize,
}

impl ScheduledPopulation {
    /// Constant weights at every step.
    pub fn steady(base: Population) -> Self {
        ScheduledPopulation { base, burst: None }
    }

    /// Weights scaled by `factor` during `[t_start, t_end)`.
    pub fn burst(base: Population, factor: f64, t_start: usize, t_end: usize) -> Self {
        let scaled = base.scaled_weights(factor);
        ScheduledPopulation {
            base,
            burst: Some(Burst {
                scaled,
                factor,
                t_start,
                t_end,
            }),
        }
    }

    pub fn at(&self, t: usize) -> &Population {
        match &self.burst {
            Some(burst) if t >= burst.t_start && t < burst.t_end => &burst.scaled,
            _ => &self.base,
        }
    }

    /// Weight scale factor in effect at step `t` (1 outside the burst).
    pub fn scale_at(&self, t: usize) -> f64 {
        match &self.burst {
            Some(burst) if t >= burst.t_start && t < burst.t_end => burst.factor,
            _ => 1.0,
        }
    }

    pub fn base(&self) -> &Population {
        &self.base
    }
}

/// Rollout controls.
#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    pub steps: usize,
    /// Shield each proposal against the current continuous state.
    pub shielded: bool,
    /// Project the state back onto the grid after every step (table replay).
    pub project: bool,
    /// Stop the trajectory at the first crash.
    pub stop_on_crash: bool,
    pub gamma: f64,
}

/// One executed step of a rollout.
#[derive(Debug, Clone, Copy)]
pub struct StepRecord {
    pub t: usize,
    /// State the step was taken from.
    pub state: SystemState,
    /// Action looked up at the nearest grid state.
    pub proposal: LeaderAction,
    pub executed: LeaderAction,
    pub mode: ShieldMode,
    /// Safe price at the executed action's effective capacity under the
    /// scheduled weights: the trace's guardrail threshold. Infinite only
    /// when even the executed action cannot certify the margin.
    pub p_safe: SafePrice,
    /// Effective capacity realized by the executed action.
    pub s_eff: f64,
    pub reward: f64,
    /// Margin-inclusive guardrail violation by the executed action.
    pub unsafe_step: bool,
    pub crashed: bool,
    /// Weight scale in effect at this step.
    pub w_scale: f64,
}

/// A completed rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub steps: Vec<StepRecord>,
    pub final_state: SystemState,
    pub discounted_return: f64,
    pub unsafe_steps: u64,
    /// Step index of the first crash, if any.
    pub crashed: Option<usize>,
}

/// Executes a policy from `s0` for `opts.steps` steps.
///
/// `lookup(t, state_index)` returns the action index to propose; the
/// closure signature covers stationary policies, per-stage DP policies,
/// and greedy action-value lookups alike.
pub fn offgrid_rollout(
    grid: &GridSpec,
    lookup: impl Fn(usize, usize) -> usize,
    s0: SystemState,
    sched: &ScheduledPopulation,
    params: &SystemParams,
    opts: &RolloutOptions,
) -> Rollout {
    let mut state = s0;
    let mut steps = Vec::with_capacity(opts.steps);
    let mut discounted_return = 0.0;
    let mut discount = 1.0;
    let mut unsafe_steps = 0u64;
    let mut crashed = None;

    for t in 0..opts.steps {
        let pop = sched.at(t);
        let state_index = grid.nearest_state_index(&state);
        let proposal = grid.action(lookup(t, state_index));

        let s_eff = guardrail::effective_capacity(&state, proposal.s_tar, params);
        let p_safe = guardrail::safe_price(pop, s_eff, params);
        let (executed, mode) = if opts.shielded {
            let shielded = guardrail::shield_with(s_eff, p_safe, &proposal, params);
            (shielded.executed, shielded.mode)
        } else {
            (proposal, ShieldMode::Unchanged)
        };
        // The recorded certificate belongs to the executed action; it can
        // differ from the proposal's only when the emergency override
        // replaced the target.
        let (s_eff, p_safe) = if mode == ShieldMode::Emergency {
            let s_eff = guardrail::effective_capacity(&state, executed.s_tar, params);
            (s_eff, guardrail::safe_price(pop, s_eff, params))
        } else {
            (s_eff, p_safe)
        };

        let outcome = dynamics::step(&state, &executed, pop, params);
        let unsafe_step = guardrail::unsafe_executed(&state, &executed, pop, params, true);
        if unsafe_step {
            unsafe_steps += 1;
        }
        discounted_return += discount * outcome.reward;
        discount *= opts.gamma;

        steps.push(StepRecord {
            t,
            state,
            proposal,
            executed,
            mode,
            p_safe,
            s_eff,
            reward: outcome.reward,
            unsafe_step,
            crashed: outcome.crashed,
            w_scale: sched.scale_at(t),
        });

        state = if opts.project {
            grid.state(grid.nearest_state_index(&outcome.next_state))
        } else {
            outcome.next_state
        };
        if outcome.crashed && crashed.is_none() {
            crashed = Some(t);
            if opts.stop_on_crash {
                break;
            }
        }
    }

    Rollout {
        steps,
        final_state: state,
        discounted_return,
        unsafe_steps,
        crashed,
    }
}
