//! Drainability guardrail: certification, safe prices, and the action shield.
//!
//! A pair `(p, s)` is *drainable* when the residual demand floor sits below
//! the service rate, `Lambda_0(p) < s·mu`; the slack `s·mu − Lambda_0(p)` is
//! then a uniform negative drift for the backlog beyond its drop thresholds,
//! which yields a unique operating point and global convergence under the
//! step-size certificate. The safe-price map inverts the requirement with a
//! margin `zeta`:
//!
//! ```text
//!     P_safe(s) = inf { p in [p_min, p_max] : Lambda_0(p) <= (1−zeta)·s·mu }
//! ```
//!
//! `Lambda_0` is piecewise hyperbolic in `p` with breakpoints at the
//! residual utility weights, so the infimum is computed exactly by a
//! breakpoint scan and one closed-form solve. The shield applies the map to
//! the one-step effective capacity of a proposed action and never touches
//! the capacity target outside the emergency fallback `(p_max, s_max)`.

use crate::demand::{
    self, drop_thresholds, lipschitz_certificate, residual_floor, DrainabilityReport,
};
use crate::dynamics::fixed_pair_step;
use crate::params::{LeaderAction, Population, SystemParams, SystemState};
use thiserror::Error;

/// Safe price, or the infinite sentinel when even `p_max` cannot satisfy
/// the margin constraint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SafePrice {
    Finite(f64),
    Infinite,
}

impl SafePrice {
    pub fn is_finite(self) -> bool {
        matches!(self, SafePrice::Finite(_))
    }

    /// Numeric view for traces and CSV output (`inf` for the sentinel).
    pub fn as_f64(self) -> f64 {
        match self {
            SafePrice::Finite(p) => p,
            SafePrice::Infinite => f64::INFINITY,
        }
    }
}

/// How the shield transformed a proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShieldMode {
    Unchanged,
    PriceLifted,
    Emergency,
}

/// Result of shielding one proposed action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShieldedAction {
    pub executed: LeaderAction,
    pub mode: ShieldMode,
    /// Safe price at the proposal's effective capacity.
    pub p_safe: SafePrice,
    /// Effective capacity the certificate was evaluated at.
    pub s_eff: f64,
}

/// Fixed point of the fixed-pair backlog recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub q_star: f64,
    /// True when demand at zero backlog is already below the service rate.
    pub at_zero: bool,
    pub iterations: u32,
    /// `|Lambda(q_star) − s·mu|` for an interior fixed point, 0 at zero.
    pub residual: f64,
}

/// The pair fails the drainability guardrail (residual floor at or above
/// the service rate), so no operating point exists.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("pair (p={p}, s={s}) is not drainable: residual floor {residual_floor} >= service rate {service_rate}")]
pub struct NotDrainable {
    pub p: f64,
    pub s: f64,
    pub residual_floor: f64,
    pub service_rate: f64,
}

/// Margin-inclusive service target `(1−zeta)·s·mu`.
///
/// Single source of truth shared by [`safe_price`], the shield certificate,
/// and the unsafe-step predicate, so their comparisons agree bit-for-bit.
pub(crate) fn margin_target(s: f64, params: &SystemParams) -> f64 {
    (1.0 - params.zeta) * (s * params.mu)
}

/// Full drainability certificate for a fixed `(p, s)` pair.
pub fn certify(pop: &Population, p: f64, s: f64, params: &SystemParams) -> DrainabilityReport {
    let floor = residual_floor(pop, p);
    let service_rate = s * params.mu;
    let slack = service_rate - floor;
    let (q_drop_per_type, q_drop) = drop_thresholds(pop, p, s, params);
    let (lipschitz_bound, step_ok) = lipschitz_certificate(pop, p, s, params);
    DrainabilityReport {
        residual_floor: floor,
        service_rate,
        slack,
        drainable: slack > 0.0,
        q_drop,
        q_drop_per_type,
        demand_cap: demand::demand_cap(pop, p),
        lipschitz_bound,
        step_ok,
    }
}

/// Smallest price in `[p_min, p_max]` whose residual floor respects the
/// margin target at capacity `s`, or [`SafePrice::Infinite`] if none does.
///
/// Exact by construction: the floor is piecewise `W/p − R` between sorted
/// residual weights, and the closed-form candidate is nudged up by at most a
/// few ulps until the constraint holds under the same floating-point
/// evaluation the certificate uses.
pub fn safe_price(pop: &Population, s: f64, params: &SystemParams) -> SafePrice {
    let target = margin_target(s, params);
    if residual_floor(pop, params.p_min) <= target {
        return SafePrice::Finite(params.p_min);
    }
    if residual_floor(pop, params.p_max) > target {
        return SafePrice::Infinite;
    }

    let mut breakpoints: Vec<f64> = pop
        .types()
        .iter()
        .filter(|t| t.is_residual() && t.w > params.p_min && t.w < params.p_max)
        .map(|t| t.w)
        .collect();
    breakpoints.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breakpoints.dedup();
    breakpoints.push(params.p_max);

    let mut lo = params.p_min;
    for hi in breakpoints {
        if residual_floor(pop, hi) <= target {
            // the crossing lies in (lo, hi]; all weights > lo are active there
            let mut weighted = 0.0;
            let mut density = 0.0;
            for t in pop.types() {
                if t.is_residual() && t.w > lo {
                    weighted += t.rho * t.w;
                    density += t.rho;
                }
            }
            let mut p = (weighted / (target + density)).clamp(lo, hi);
            while residual_floor(pop, p) > target {
                p = p.next_up();
            }
            return SafePrice::Finite(p);
        }
        lo = hi;
    }
    unreachable!("the floor at p_max was already checked against the target");
}

/// One-step effective capacity `proj[0,s_max](S + min(ωB, s_max−S) − ν[S−s_tar]+)`.
pub fn effective_capacity(state: &SystemState, s_tar: f64, params: &SystemParams) -> f64 {
    let activation = (params.omega * state.b).min(params.s_max - state.s);
    (state.s + activation - params.nu * (state.s - s_tar).max(0.0)).clamp(0.0, params.s_max)
}

/// Applies the action shield to a proposal.
pub fn shield(
    state: &SystemState,
    proposal: &LeaderAction,
    pop: &Population,
    params: &SystemParams,
) -> ShieldedAction {
    let s_eff = effective_capacity(state, proposal.s_tar, params);
    let p_safe = safe_price(pop, s_eff, params);
    shield_with(s_eff, p_safe, proposal, params)
}

/// Shield decision from a precomputed `(s_eff, p_safe)` certificate pair.
///
/// [`shield`] and the planner's table builder both route through this
/// function, so batched construction (which caches the certificate per
/// state and target) stays bit-identical to one-off shielding.
pub fn shield_with(
    s_eff: f64,
    p_safe: SafePrice,
    proposal: &LeaderAction,
    params: &SystemParams,
) -> ShieldedAction {
    match p_safe {
        SafePrice::Finite(floor_price) if proposal.p >= floor_price => ShieldedAction {
            executed: *proposal,
            mode: ShieldMode::Unchanged,
            p_safe,
            s_eff,
        },
        SafePrice::Finite(floor_price) => ShieldedAction {
            executed: LeaderAction::new(floor_price, proposal.s_tar),
            mode: ShieldMode::PriceLifted,
            p_safe,
            s_eff,
        },
        SafePrice::Infinite => ShieldedAction {
            executed: LeaderAction::new(params.p_max, params.s_max),
            mode: ShieldMode::Emergency,
            p_safe,
            s_eff,
        },
    }
}

/// Whether an executed action violates the guardrail at its state.
///
/// With `include_margin` the predicate matches the shield's own certificate,
/// `Lambda_0(p) > (1−zeta)·s_eff·mu`; without it, the margin-free reading
/// `Lambda_0(p) >= s_eff·mu` is evaluated instead.
pub fn unsafe_executed(
    state: &SystemState,
    executed: &LeaderAction,
    pop: &Population,
    params: &SystemParams,
    include_margin: bool,
) -> bool {
    let s_eff = effective_capacity(state, executed.s_tar, params);
    let floor = residual_floor(pop, executed.p);
    if include_margin {
        floor > margin_target(s_eff, params)
    } else {
        floor >= s_eff * params.mu
    }
}

/// Locates the unique operating point of a drainable pair by bisection.
pub fn operating_point(
    pop: &Population,
    p: f64,
    s: f64,
    params: &SystemParams,
    tol: f64,
) -> Result<OperatingPoint, NotDrainable> {
    let report = certify(pop, p, s, params);
    if !report.drainable {
        return Err(NotDrainable {
            p,
            s,
            residual_floor: report.residual_floor,
            service_rate: report.service_rate,
        });
    }
    let service = s * params.mu;
    let demand_at = |q: f64| demand::aggregate_total(pop, p, demand::delay_proxy(q, s, params));
    if demand_at(0.0) <= service {
        return Ok(OperatingPoint {
            q_star: 0.0,
            at_zero: true,
            iterations: 0,
            residual: 0.0,
        });
    }

    // f(q) = Lambda(q) − s·mu is continuous and strictly decreasing until it
    // pins at the (negative) residual slack, so [0, q_drop] brackets the root.
    let mut lo = 0.0f64;
    let mut hi = report.q_drop;
    let mut mid = 0.5 * (lo + hi);
    let mut f_mid = demand_at(mid) - service;
    let mut iterations = 0u32;
    while f_mid.abs() > tol && iterations < 200 {
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        f_mid = demand_at(mid) - service;
        iterations += 1;
    }
    Ok(OperatingPoint {
        q_star: mid,
        at_zero: false,
        iterations,
        residual: f_mid.abs(),
    })
}

/// Upper end of the absorbing backlog interval, `q_drop + delta·Lambda_max`.
pub fn absorbing_interval(pop: &Population, p: f64, s: f64, params: &SystemParams) -> f64 {
    let (_, q_drop) = drop_thresholds(pop, p, s, params);
    q_drop + params.delta * demand::demand_cap(pop, p)
}

/// Fixed-pair trajectory `[q0, q1, ..., q_{t_max}]`.
pub fn simulate_fixed_pair(
    q0: f64,
    pop: &Population,
    p: f64,
    s: f64,
    params: &SystemParams,
    t_max: usize,
) -> Vec<f64> {
    let mut trajectory = Vec::with_capacity(t_max + 1);
    let mut q = q0;
    trajectory.push(q);
    for _ in 0..t_max {
        q = fixed_pair_step(q, p, s, pop, params);
        trajectory.push(q);
    }
    trajectory
}
