//! State and action grids with deterministic indexing.
//!
//! States are indexed lexicographically by `(q, s, b, s_tar_prev)` axis
//! indices, actions by `(p, s_tar)`, so action 0 is `(p_min, 0)`. The
//! backlog axis is mixed-resolution: a fine head (step 0.5 up to 5) and a
//! coarse tail (step 1 up to `q_max`). Nearest-neighbor projection breaks
//! distance ties toward the smaller grid value.

use crate::params::{LeaderAction, SystemParams, SystemState};
use thiserror::Error;

/// A grid axis is malformed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("grid axis {axis} is empty")]
    Empty { axis: &'static str },
    #[error("grid axis {axis} is not strictly increasing at position {position}")]
    NonMonotone { axis: &'static str, position: usize },
}

/// Step sizes for [`build_grid_with`]; defaults give the baseline grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GridConfig {
    /// Upper end of the fine backlog region.
    pub q_fine_max: f64,
    pub q_fine_step: f64,
    pub q_coarse_step: f64,
    pub s_step: f64,
    pub b_step: f64,
    pub p_step: f64,
    pub s_tar_step: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            q_fine_max: 5.0,
            q_fine_step: 0.5,
            q_coarse_step: 1.0,
            s_step: 0.5,
            b_step: 0.5,
            p_step: 0.2,
            s_tar_step: 0.5,
        }
    }
}

/// Discretization of the state and action spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub q_points: Vec<f64>,
    pub s_points: Vec<f64>,
    pub b_points: Vec<f64>,
    pub s_tar_prev_points: Vec<f64>,
    pub p_points: Vec<f64>,
    pub s_tar_points: Vec<f64>,
}

/// Uniform axis `lo..=hi` with approximately the given step.
///
/// Points are `lo + (hi−lo)·i/n`, which lands exactly on representable
/// values at integer and half-integer marks and forces both endpoints.
fn uniform_axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let n = ((hi - lo) / step).round().max(1.0) as usize;
    let span = hi - lo;
    (0..=n)
        .map(|i| {
            if i == n {
                hi
            } else {
                lo + span * (i as f64) / (n as f64)
            }
        })
        .collect()
}

impl GridSpec {
    /// Validates that every axis is nonempty and strictly increasing.
    pub fn new(
        q_points: Vec<f64>,
        s_points: Vec<f64>,
        b_points: Vec<f64>,
        s_tar_prev_points: Vec<f64>,
        p_points: Vec<f64>,
        s_tar_points: Vec<f64>,
    ) -> Result<Self, SpecError> {
        let axes: [(&'static str, &[f64]); 6] = [
            ("q", &q_points),
            ("s", &s_points),
            ("b", &b_points),
            ("s_tar_prev", &s_tar_prev_points),
            ("p", &p_points),
            ("s_tar", &s_tar_points),
        ];
        for (axis, points) in axes {
            if points.is_empty() {
                return Err(SpecError::Empty { axis });
            }
            for (position, pair) in points.windows(2).enumerate() {
                // NaN must fail the strict-increase check, not slip past it
                if pair[1].partial_cmp(&pair[0]) != Some(std::cmp::Ordering::Greater) {
                    return Err(SpecError::NonMonotone { axis, position });
                }
            }
        }
        Ok(GridSpec {
            q_points,
            s_points,
            b_points,
            s_tar_prev_points,
            p_points,
            s_tar_points,
        })
    }

    pub fn n_states(&self) -> usize {
        self.q_points.len()
            * self.s_points.len()
            * self.b_points.len()
            * self.s_tar_prev_points.len()
    }

    pub fn n_actions(&self) -> usize {
        self.p_points.len() * self.s_tar_points.len()
    }

    pub fn n_s_tar(&self) -> usize {
        self.s_tar_points.len()
    }

    /// Decomposes a state index into per-axis indices `(iq, is, ib, it)`.
    pub fn state_axes(&self, index: usize) -> (usize, usize, usize, usize) {
        let nt = self.s_tar_prev_points.len();
        let nb = self.b_points.len();
        let ns = self.s_points.len();
        let it = index % nt;
        let rest = index / nt;
        let ib = rest % nb;
        let rest = rest / nb;
        let is = rest % ns;
        let iq = rest / ns;
        (iq, is, ib, it)
    }

    pub fn state_index(&self, iq: usize, is: usize, ib: usize, it: usize) -> usize {
        ((iq * self.s_points.len() + is) * self.b_points.len() + ib)
            * self.s_tar_prev_points.len()
            + it
    }

    pub fn state(&self, index: usize) -> SystemState {
        let (iq, is, ib, it) = self.state_axes(index);
        SystemState::new(
            self.q_points[iq],
            self.s_points[is],
            self.b_points[ib],
            self.s_tar_prev_points[it],
        )
    }

    /// Backlog axis index of a state index (used for crash detection).
    pub fn q_axis_index(&self, state_index: usize) -> usize {
        state_index
            / (self.s_points.len() * self.b_points.len() * self.s_tar_prev_points.len())
    }

    pub fn action(&self, index: usize) -> LeaderAction {
        let nt = self.s_tar_points.len();
        LeaderAction::new(self.p_points[index / nt], self.s_tar_points[index % nt])
    }

    pub fn action_index(&self, ip: usize, it: usize) -> usize {
        ip * self.s_tar_points.len() + it
    }

    /// Index of the nearest grid state, ties toward smaller values.
    pub fn nearest_state_index(&self, state: &SystemState) -> usize {
        self.state_index(
            nearest(&self.q_points, state.q),
            nearest(&self.s_points, state.s),
            nearest(&self.b_points, state.b),
            nearest(&self.s_tar_prev_points, state.s_tar_prev),
        )
    }
}

/// Index of the value in a sorted axis nearest to `x`; on an exact distance
/// tie the smaller grid value wins.
fn nearest(points: &[f64], x: f64) -> usize {
    let j = points.partition_point(|&v| v < x);
    if j == 0 {
        return 0;
    }
    if j == points.len() {
        return points.len() - 1;
    }
    // both distances are nonnegative; <= prefers the smaller value on a tie
    if x - points[j - 1] <= points[j] - x {
        j - 1
    } else {
        j
    }
}

/// The baseline grid for the given parameters.
pub fn build_grid(params: &SystemParams) -> GridSpec {
    build_grid_with(params, &GridConfig::default())
        .expect("default grid construction is monotone by construction")
}

/// Grid with explicit step configuration.
pub fn build_grid_with(params: &SystemParams, cfg: &GridConfig) -> Result<GridSpec, SpecError> {
    let fine_max = cfg.q_fine_max.min(params.q_max);
    let mut q_points = uniform_axis(0.0, fine_max, cfg.q_fine_step);
    let mut k = 1.0;
    loop {
        let v = fine_max + k * cfg.q_coarse_step;
        if v >= params.q_max {
            break;
        }
        q_points.push(v);
        k += 1.0;
    }
    if params.q_max > fine_max {
        q_points.push(params.q_max);
    }
    let s_points = uniform_axis(0.0, params.s_max, cfg.s_step);
    GridSpec::new(
        q_points,
        s_points.clone(),
        uniform_axis(0.0, params.b_max, cfg.b_step),
        s_points,
        uniform_axis(params.p_min, params.p_max, cfg.p_step),
        uniform_axis(0.0, params.s_max, cfg.s_tar_step),
    )
}
