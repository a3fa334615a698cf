//! Stage-wise follower equilibrium.
//!
//! Each epoch, tenants of type `k` submit work at the unique best-response
//! rate against the posted price `p` and the queue-based delay proxy
//!
//! ```text
//!     D(q, s) = q / (s·mu + eps)
//!     lambda_k(p, d) = [ w_k / (p + delta_k·d) − 1 ]+
//!     Lambda(p, d)   = sum_k rho_k · lambda_k(p, d)
//! ```
//!
//! Delay-insensitive types (`delta_k = 0`) never react to congestion and
//! form the residual floor `Lambda_0(p)`; delay-sensitive types drop out
//! entirely once the backlog passes their drop thresholds. Those structural
//! quantities, together with the demand cap and the Lipschitz step-size
//! certificate, drive the guardrail and the convergence analysis downstream.

use crate::params::{Population, SystemParams, TenantType};

/// Per-type equilibrium rates plus their density-weighted aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    /// Rate `lambda_k` for each tenant type, in population order.
    pub per_type: Vec<f64>,
    /// Aggregate `Lambda = sum_k rho_k·lambda_k`.
    pub total: f64,
}

/// Structural report for a fixed `(p, s)` pair; see [`crate::guardrail`].
#[derive(Debug, Clone, PartialEq)]
pub struct DrainabilityReport {
    /// Residual demand floor `Lambda_0(p)`.
    pub residual_floor: f64,
    /// Service rate `s·mu`.
    pub service_rate: f64,
    /// Drainability slack `s·mu − Lambda_0(p)`.
    pub slack: f64,
    /// Whether the slack is strictly positive.
    pub drainable: bool,
    /// Largest per-type drop threshold (0 if no delay-sensitive type).
    pub q_drop: f64,
    /// Drop threshold per delay-sensitive type, 0 for residual types.
    pub q_drop_per_type: Vec<f64>,
    /// Zero-delay demand cap `Lambda_max(p)`.
    pub demand_cap: f64,
    /// Sufficient upper bound on the demand map's backlog Lipschitz constant.
    pub lipschitz_bound: f64,
    /// Whether `delta · lipschitz_bound <= 1` (sufficient step condition).
    pub step_ok: bool,
}

/// Queue-based delay proxy `q / (s·mu + eps)`.
pub fn delay_proxy(q: f64, s: f64, params: &SystemParams) -> f64 {
    q / (s * params.mu + params.eps_delay)
}

/// Unique follower best response `[w/(p + delta_k·d) − 1]+`.
pub fn best_response(tenant: &TenantType, p: f64, d: f64) -> f64 {
    (tenant.w / (p + tenant.delta_k * d) - 1.0).max(0.0)
}

/// Aggregate equilibrium demand at price `p` and delay `d`.
pub fn aggregate_demand(pop: &Population, p: f64, d: f64) -> DemandProfile {
    let mut per_type = Vec::with_capacity(pop.len());
    let mut total = 0.0;
    for tenant in pop.types() {
        let rate = best_response(tenant, p, d);
        per_type.push(rate);
        total += tenant.rho * rate;
    }
    DemandProfile { per_type, total }
}

/// Aggregate demand without materializing the per-type vector.
///
/// Accumulates in the same order as [`aggregate_demand`], so the two totals
/// are bit-identical; used on hot paths (table construction, rollouts).
pub fn aggregate_total(pop: &Population, p: f64, d: f64) -> f64 {
    let mut total = 0.0;
    for tenant in pop.types() {
        total += tenant.rho * best_response(tenant, p, d);
    }
    total
}

/// Residual demand floor `Lambda_0(p)`: the delay-insensitive aggregate.
///
/// Accumulation visits types in population order, adding only residual
/// contributions; since delay-sensitive types contribute exactly `+0.0`
/// beyond their drop thresholds, this equals [`aggregate_total`] bit-for-bit
/// throughout the residual regime.
pub fn residual_floor(pop: &Population, p: f64) -> f64 {
    let mut total = 0.0;
    for tenant in pop.types() {
        if tenant.is_residual() {
            total += tenant.rho * (tenant.w / p - 1.0).max(0.0);
        }
    }
    total
}

/// Backlog drop thresholds `[(s·mu+eps)·(w_k−p)/delta_k]+` per type, and
/// their maximum (0 when no delay-sensitive type exists).
///
/// Thresholds are rounded up by at most a few ulps so that the dropout
/// condition `p + delta_k·D(q_k) >= w_k` holds under the exact same
/// floating-point evaluation as [`delay_proxy`] and [`best_response`]; the
/// residual-regime identity is then exact at the threshold itself.
pub fn drop_thresholds(
    pop: &Population,
    p: f64,
    s: f64,
    params: &SystemParams,
) -> (Vec<f64>, f64) {
    let cap = s * params.mu + params.eps_delay;
    let mut per_type = Vec::with_capacity(pop.len());
    let mut q_drop = 0.0f64;
    for tenant in pop.types() {
        let qk = if tenant.is_residual() {
            0.0
        } else {
            let slope = ((tenant.w - p) / tenant.delta_k).max(0.0);
            let mut qk = cap * slope;
            while p + tenant.delta_k * (qk / cap) < tenant.w {
                qk = qk.next_up();
            }
            qk
        };
        per_type.push(qk);
        q_drop = q_drop.max(qk);
    }
    (per_type, q_drop)
}

/// Zero-delay demand cap `Lambda_max(p) = Lambda(p, 0)`.
pub fn demand_cap(pop: &Population, p: f64) -> f64 {
    aggregate_total(pop, p, 0.0)
}

/// SLO-risk mass `Xi = sum_k rho_k·lambda_k·[d − SLO_k]+`.
///
/// Infinite-SLO types contribute exactly zero through the sentinel branch,
/// never through arithmetic on a large stand-in.
pub fn slo_risk(pop: &Population, p: f64, d: f64) -> f64 {
    let mut xi = 0.0;
    for tenant in pop.types() {
        let excess = tenant.slo.excess(d);
        if excess > 0.0 {
            xi += tenant.rho * best_response(tenant, p, d) * excess;
        }
    }
    xi
}

/// Sufficient Lipschitz bound for the backlog-to-demand map and the
/// induced step condition `delta·L <= 1`.
///
/// `step_ok = false` means the sufficient condition fails, not that the
/// map is actually non-contractive.
pub fn lipschitz_certificate(
    pop: &Population,
    p: f64,
    s: f64,
    params: &SystemParams,
) -> (f64, bool) {
    let mut weighted = 0.0;
    for tenant in pop.types() {
        if !tenant.is_residual() {
            weighted += tenant.rho * tenant.w * tenant.delta_k;
        }
    }
    let cap = s * params.mu + params.eps_delay;
    let bound = weighted / (cap * (p * p));
    (bound, params.delta * bound <= 1.0)
}
