//! Domain constants, state/action records, and validation.
//!
//! Everything downstream (demand, dynamics, guardrail, planner, rl) consumes
//! the types defined here. All quantities are double-precision and unitless
//! apart from the epoch length `delta`; validation happens once at the
//! boundary and the validated values are immutable afterwards.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Global system parameters.
///
/// Bounds and rates for the closed-loop pricing/scaling model:
/// backlog `q` lives in `[0, q_max]`, active capacity `s` in `[0, s_max]`,
/// the provisioning pipeline `b` in `[0, b_max]`, and prices in
/// `[p_min, p_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    /// Epoch length (time units per decision step).
    pub delta: f64,
    /// Discount factor, strictly inside (0, 1).
    pub gamma: f64,
    /// Service rate per GPU per epoch.
    pub mu: f64,
    /// Delay-proxy baseline; keeps the delay finite at zero capacity.
    pub eps_delay: f64,
    /// Backlog truncation bound.
    pub q_max: f64,
    /// Active-capacity bound.
    pub s_max: f64,
    /// Pipeline bound.
    pub b_max: f64,
    /// Price floor (strictly positive).
    pub p_min: f64,
    /// Price cap.
    pub p_max: f64,
    /// Pipeline activation rate per epoch.
    pub omega: f64,
    /// Scale-down inertia rate per epoch.
    pub nu: f64,
    /// Cancellation fraction applied to target reductions.
    pub chi: f64,
    /// Active-capacity unit cost.
    pub c_op: f64,
    /// Pipeline unit cost.
    pub c_b: f64,
    /// Target-change quadratic penalty weight.
    pub eta_tar: f64,
    /// SLO-risk penalty scale.
    pub phi0: f64,
    /// Shield safety margin, strictly inside (0, 1).
    pub zeta: f64,
}

/// Violation found while validating [`SystemParams`].
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parameter `{field}` = {value} violates `{requirement}`")]
pub struct RangeError {
    pub field: &'static str,
    pub value: f64,
    pub requirement: &'static str,
}

impl SystemParams {
    /// Baseline configuration used by the experiments and the CLI defaults.
    pub fn baseline() -> Self {
        SystemParams {
            delta: 1.0,
            gamma: 0.99,
            mu: 0.8,
            eps_delay: 0.1,
            q_max: 50.0,
            s_max: 4.0,
            b_max: 3.0,
            p_min: 1.0,
            p_max: 6.0,
            omega: 0.2,
            nu: 0.2,
            chi: 0.3,
            c_op: 1.0,
            c_b: 0.5,
            eta_tar: 0.4,
            phi0: 8.0,
            zeta: 0.05,
        }
    }

    /// Checks every invariant and returns the params unchanged on success.
    pub fn validated(self) -> Result<Self, RangeError> {
        fn check(
            field: &'static str,
            value: f64,
            ok: bool,
            requirement: &'static str,
        ) -> Result<(), RangeError> {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(RangeError {
                    field,
                    value,
                    requirement,
                })
            }
        }

        check("delta", self.delta, self.delta > 0.0, "delta > 0")?;
        check(
            "gamma",
            self.gamma,
            self.gamma > 0.0 && self.gamma < 1.0,
            "0 < gamma < 1",
        )?;
        check("mu", self.mu, self.mu > 0.0, "mu > 0")?;
        check(
            "eps_delay",
            self.eps_delay,
            self.eps_delay > 0.0,
            "eps_delay > 0",
        )?;
        check("q_max", self.q_max, self.q_max > 0.0, "q_max > 0")?;
        check("s_max", self.s_max, self.s_max > 0.0, "s_max > 0")?;
        check("b_max", self.b_max, self.b_max > 0.0, "b_max > 0")?;
        check("p_min", self.p_min, self.p_min > 0.0, "p_min > 0")?;
        check(
            "p_max",
            self.p_max,
            self.p_max >= self.p_min,
            "p_max >= p_min",
        )?;
        check(
            "omega",
            self.omega,
            self.omega > 0.0 && self.omega <= 1.0,
            "0 < omega <= 1",
        )?;
        check("nu", self.nu, self.nu > 0.0 && self.nu <= 1.0, "0 < nu <= 1")?;
        check("chi", self.chi, (0.0..=1.0).contains(&self.chi), "0 <= chi <= 1")?;
        check("c_op", self.c_op, self.c_op >= 0.0, "c_op >= 0")?;
        check("c_b", self.c_b, self.c_b >= 0.0, "c_b >= 0")?;
        check("eta_tar", self.eta_tar, self.eta_tar >= 0.0, "eta_tar >= 0")?;
        check("phi0", self.phi0, self.phi0 >= 0.0, "phi0 >= 0")?;
        check(
            "zeta",
            self.zeta,
            self.zeta > 0.0 && self.zeta < 1.0,
            "0 < zeta < 1",
        )?;
        Ok(self)
    }
}

/// SLO threshold in delay units: finite, or infinite for delay-insensitive
/// tenants.
///
/// The infinite case is a dedicated sentinel so that `[d − SLO]₊` can be
/// taken as exactly zero by a branch, never by arithmetic against a large
/// finite stand-in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slo {
    Finite(f64),
    Infinite,
}

impl Slo {
    pub fn is_infinite(self) -> bool {
        matches!(self, Slo::Infinite)
    }

    /// Excess delay `[d − SLO]₊`; exactly 0 for infinite SLO.
    pub fn excess(self, d: f64) -> f64 {
        match self {
            Slo::Finite(bound) => (d - bound).max(0.0),
            Slo::Infinite => 0.0,
        }
    }

    /// Numeric view for hashing and traces (`inf` for the sentinel).
    pub fn as_f64(self) -> f64 {
        match self {
            Slo::Finite(bound) => bound,
            Slo::Infinite => f64::INFINITY,
        }
    }
}

impl Serialize for Slo {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v = match self {
            Slo::Finite(b) => *b,
            Slo::Infinite => f64::INFINITY,
        };
        serializer.serialize_f64(v)
    }
}

impl<'de> Deserialize<'de> for Slo {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        if v == f64::INFINITY {
            Ok(Slo::Infinite)
        } else {
            Ok(Slo::Finite(v))
        }
    }
}

/// One mean-field tenant type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TenantType {
    /// Utility weight (willingness to pay).
    pub w: f64,
    /// Delay SLO; `inf` in config files marks delay-insensitive types.
    pub slo: Slo,
    /// SLO-risk coefficient; zero exactly for infinite-SLO types.
    pub delta_k: f64,
    /// Population density.
    pub rho: f64,
}

impl TenantType {
    pub fn is_residual(&self) -> bool {
        self.delta_k == 0.0
    }
}

/// Violation found while validating a tenant list.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PopulationError {
    #[error("tenant densities sum to {sum}, expected 1 within 1e-9")]
    Density { sum: f64 },
    #[error("tenant {index}: delta_k = 0 must pair with an infinite SLO and delta_k > 0 with a finite one")]
    Consistency { index: usize },
    #[error("tenant {index}: `{field}` = {value} violates `{requirement}`")]
    Range {
        index: usize,
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("population must contain at least one tenant type")]
    Empty,
}

/// Validated, ordered collection of tenant types.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    types: Vec<TenantType>,
}

impl Population {
    /// Validates densities, ranges, and the delta/SLO consistency rule.
    pub fn new(types: Vec<TenantType>) -> Result<Self, PopulationError> {
        if types.is_empty() {
            return Err(PopulationError::Empty);
        }
        for (index, t) in types.iter().enumerate() {
            if !(t.w > 0.0 && t.w.is_finite()) {
                return Err(PopulationError::Range {
                    index,
                    field: "w",
                    value: t.w,
                    requirement: "w > 0",
                });
            }
            if !(t.rho >= 0.0 && t.rho.is_finite()) {
                return Err(PopulationError::Range {
                    index,
                    field: "rho",
                    value: t.rho,
                    requirement: "rho >= 0",
                });
            }
            if !(t.delta_k >= 0.0 && t.delta_k.is_finite()) {
                return Err(PopulationError::Range {
                    index,
                    field: "delta_k",
                    value: t.delta_k,
                    requirement: "delta_k >= 0",
                });
            }
            match t.slo {
                Slo::Finite(b) if !(b > 0.0 && b.is_finite()) => {
                    return Err(PopulationError::Range {
                        index,
                        field: "slo",
                        value: b,
                        requirement: "finite slo > 0",
                    });
                }
                _ => {}
            }
            if t.is_residual() != t.slo.is_infinite() {
                return Err(PopulationError::Consistency { index });
            }
        }
        let sum: f64 = types.iter().map(|t| t.rho).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PopulationError::Density { sum });
        }
        Ok(Population { types })
    }

    /// Six-type baseline population used by the experiments.
    pub fn baseline() -> Self {
        let finite = |w, slo, delta_k, rho| TenantType {
            w,
            slo: Slo::Finite(slo),
            delta_k,
            rho,
        };
        let residual = |w, rho| TenantType {
            w,
            slo: Slo::Infinite,
            delta_k: 0.0,
            rho,
        };
        Population::new(vec![
            finite(24.0, 4.0, 4.5, 0.10),
            finite(18.0, 6.0, 2.5, 0.15),
            finite(16.0, 10.0, 1.5, 0.15),
            finite(15.0, 15.0, 1.1, 0.10),
            residual(12.0, 0.30),
            residual(10.0, 0.20),
        ])
        .expect("baseline population is valid")
    }

    pub fn types(&self) -> &[TenantType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    /// Copy with every utility weight multiplied by `factor` (> 0); densities,
    /// SLOs, and sensitivities are unchanged. Used for demand bursts.
    pub fn scaled_weights(&self, factor: f64) -> Self {
        assert!(
            factor > 0.0 && factor.is_finite(),
            "weight scale must be positive and finite"
        );
        Population {
            types: self
                .types
                .iter()
                .map(|t| TenantType {
                    w: t.w * factor,
                    ..*t
                })
                .collect(),
        }
    }
}

/// Full system state `(q, s, b, s_tar_prev)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    /// Backlog in work units.
    pub q: f64,
    /// Active capacity in GPUs.
    pub s: f64,
    /// Pending pipeline in GPUs.
    pub b: f64,
    /// Previous capacity target in GPUs.
    pub s_tar_prev: f64,
}

impl SystemState {
    pub fn new(q: f64, s: f64, b: f64, s_tar_prev: f64) -> Self {
        SystemState { q, s, b, s_tar_prev }
    }

    /// Componentwise projection onto the feasible box; idempotent.
    pub fn clamped(self, params: &SystemParams) -> Self {
        SystemState {
            q: self.q.clamp(0.0, params.q_max),
            s: self.s.clamp(0.0, params.s_max),
            b: self.b.clamp(0.0, params.b_max),
            s_tar_prev: self.s_tar_prev.clamp(0.0, params.s_max),
        }
    }

    pub fn is_valid(&self, params: &SystemParams) -> bool {
        *self == self.clamped(params)
    }
}

/// Leader action `(p, s_tar)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderAction {
    /// Posted unit price.
    pub p: f64,
    /// Posted capacity target.
    pub s_tar: f64,
}

impl LeaderAction {
    pub fn new(p: f64, s_tar: f64) -> Self {
        LeaderAction { p, s_tar }
    }

    pub fn clamped(self, params: &SystemParams) -> Self {
        LeaderAction {
            p: self.p.clamp(params.p_min, params.p_max),
            s_tar: self.s_tar.clamp(0.0, params.s_max),
        }
    }

    pub fn is_valid(&self, params: &SystemParams) -> bool {
        *self == self.clamped(params)
    }
}
