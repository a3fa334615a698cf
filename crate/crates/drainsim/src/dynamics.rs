//! One-epoch closed-loop transition and reward.
//!
//! Given state `(Q, S, B, S_tar_prev)` and action `(P, S_tar)`:
//!
//! ```text
//!     D  = Q / (S·mu + eps)                     delay proxy
//!     L  = Lambda(P, D)                         equilibrium demand
//!     U  = [S_tar − S_tar_prev]+                target raise
//!     V  = [S_tar_prev − S_tar]+                target cut
//!     A  = min(omega·B, s_max − S)              activation
//!     C  = min(chi·V, B − A + U)                cancellation
//!     B' = proj[0, b_max](B − A + U − C)
//!     S' = proj[0, s_max](S + A − nu·[S − S_tar]+)
//!     Q' = [Q + delta·(L − S·mu)]+              (clamped at q_max, full model)
//! ```
//!
//! The reward balances revenue against operating cost, pipeline cost, a
//! quadratic target-change penalty, and the SLO-risk penalty `phi0·Xi`.
//! The fixed-pair recursion reuses the same backlog update with `(P, S)`
//! frozen and no truncation bound, matching the convergence analysis.

use crate::demand::{self, DemandProfile};
use crate::params::{LeaderAction, Population, SystemParams, SystemState};

/// Everything produced by one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    /// Equilibrium demand at the pre-transition state.
    pub demand: DemandProfile,
    /// Pipeline mass activated this epoch (`A`).
    pub activated: f64,
    /// Pipeline mass canceled this epoch (`C`).
    pub canceled: f64,
    /// Delay proxy at the pre-transition state (`D`).
    pub delay: f64,
    /// SLO-risk mass (`Xi`).
    pub xi: f64,
    /// Whether the pre-clamp next backlog reached `q_max`.
    pub crashed: bool,
}

/// The five signed reward terms; `total()` is the scalar reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardComponents {
    pub revenue: f64,
    pub op_cost: f64,
    pub pipeline_cost: f64,
    pub target_penalty: f64,
    pub slo_penalty: f64,
}

impl RewardComponents {
    pub fn total(&self) -> f64 {
        self.revenue - self.op_cost - self.pipeline_cost - self.target_penalty - self.slo_penalty
    }
}

fn components_from(
    state: &SystemState,
    action: &LeaderAction,
    params: &SystemParams,
    lambda_total: f64,
    xi: f64,
) -> RewardComponents {
    let dtar = action.s_tar - state.s_tar_prev;
    RewardComponents {
        revenue: action.p * lambda_total,
        op_cost: params.c_op * state.s,
        pipeline_cost: params.c_b * state.b,
        target_penalty: params.eta_tar * (dtar * dtar),
        slo_penalty: params.phi0 * xi,
    }
}

/// One full-model transition.
pub fn step(
    state: &SystemState,
    action: &LeaderAction,
    pop: &Population,
    params: &SystemParams,
) -> StepOutcome {
    let delay = demand::delay_proxy(state.q, state.s, params);
    let profile = demand::aggregate_demand(pop, action.p, delay);
    let xi = demand::slo_risk(pop, action.p, delay);

    let raise = (action.s_tar - state.s_tar_prev).max(0.0);
    let cut = (state.s_tar_prev - action.s_tar).max(0.0);
    let activated = (params.omega * state.b).min(params.s_max - state.s);
    let canceled = (params.chi * cut).min(state.b - activated + raise);

    let b_next = (state.b - activated + raise - canceled).clamp(0.0, params.b_max);
    let s_next = (state.s + activated - params.nu * (state.s - action.s_tar).max(0.0))
        .clamp(0.0, params.s_max);

    let q_unclamped = (state.q + params.delta * (profile.total - state.s * params.mu)).max(0.0);
    let crashed = q_unclamped >= params.q_max;
    let q_next = q_unclamped.min(params.q_max);

    let reward = components_from(state, action, params, profile.total, xi).total();

    StepOutcome {
        next_state: SystemState {
            q: q_next,
            s: s_next,
            b: b_next,
            s_tar_prev: action.s_tar,
        },
        reward,
        demand: profile,
        activated,
        canceled,
        delay,
        xi,
        crashed,
    }
}

/// Backlog recursion with `(p, s)` frozen; no truncation bound.
pub fn fixed_pair_step(q: f64, p: f64, s: f64, pop: &Population, params: &SystemParams) -> f64 {
    let lambda = demand::aggregate_total(pop, p, demand::delay_proxy(q, s, params));
    (q + params.delta * (lambda - s * params.mu)).max(0.0)
}

/// The five reward terms for `(state, action)`, recomputing demand and
/// SLO risk; their signed sum equals [`StepOutcome::reward`] bit-for-bit.
pub fn reward_components(
    state: &SystemState,
    action: &LeaderAction,
    pop: &Population,
    params: &SystemParams,
) -> RewardComponents {
    let delay = demand::delay_proxy(state.q, state.s, params);
    let lambda = demand::aggregate_total(pop, action.p, delay);
    let xi = demand::slo_risk(pop, action.p, delay);
    components_from(state, action, params, lambda, xi)
}
