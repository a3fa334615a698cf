//! Deterministic guarded transition and reward tables.
//!
//! For every `(grid state, grid action)` pair the builder shields the
//! proposal (or passes it through for the unshielded table), steps the
//! continuous dynamics on the executed action, and projects the next state
//! back onto the grid. The safe-price certificate depends only on
//! `(state, s_tar)`, so it is computed once per state and target and shared
//! across all prices through the same [`guardrail::shield_with`] code path
//! the online shield uses, keeping on-grid and off-grid decisions
//! bit-identical.

use crate::dynamics;
use crate::guardrail::{self, SafePrice, ShieldMode, ShieldedAction};
use crate::parallel::{self, ExecMode};
use crate::params::{LeaderAction, Population, SystemParams};
use crate::planner::grid::GridSpec;

/// Flattened `|states| × |actions|` transition and reward tables plus
/// per-pair shield metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardedTable {
    /// Whether the shield was applied at build time.
    pub shielded: bool,
    /// Projected next state index per pair, row-major by state.
    pub next_index: Vec<u32>,
    /// Reward of the executed action per pair.
    pub reward: Vec<f64>,
    /// Executed price per pair (differs from the proposal when lifted).
    pub exec_p: Vec<f64>,
    /// Shield mode per pair, as `ShieldMode` discriminants.
    pub mode: Vec<u8>,
    /// Safe price per `(state, s_tar)` pair (`inf` for the sentinel).
    pub p_safe: Vec<f64>,
    /// Effective capacity per `(state, s_tar)` pair.
    pub s_eff: Vec<f64>,
    /// Largest absolute reward over the table.
    pub r_max: f64,
    pub n_states: usize,
    pub n_actions: usize,
    n_s_tar: usize,
}

fn mode_to_u8(mode: ShieldMode) -> u8 {
    match mode {
        ShieldMode::Unchanged => 0,
        ShieldMode::PriceLifted => 1,
        ShieldMode::Emergency => 2,
    }
}

pub(crate) fn mode_from_u8(byte: u8) -> ShieldMode {
    match byte {
        0 => ShieldMode::Unchanged,
        1 => ShieldMode::PriceLifted,
        2 => ShieldMode::Emergency,
        other => panic!("invalid shield mode discriminant {other}"),
    }
}

impl GuardedTable {
    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    /// Reconstructs the shield outcome stored for a pair.
    pub fn executed(
        &self,
        grid: &GridSpec,
        params: &SystemParams,
        state: usize,
        action: usize,
    ) -> ShieldedAction {
        let pair = self.pair_index(state, action);
        let mode = mode_from_u8(self.mode[pair]);
        let cert = state * self.n_s_tar + action % self.n_s_tar;
        let s_tar = if mode == ShieldMode::Emergency {
            params.s_max
        } else {
            grid.s_tar_points[action % self.n_s_tar]
        };
        let p_safe = if self.p_safe[cert].is_infinite() {
            SafePrice::Infinite
        } else {
            SafePrice::Finite(self.p_safe[cert])
        };
        ShieldedAction {
            executed: LeaderAction::new(self.exec_p[pair], s_tar),
            mode,
            p_safe,
            s_eff: self.s_eff[cert],
        }
    }
}

struct StateRow {
    next: Vec<u32>,
    reward: Vec<f64>,
    exec_p: Vec<f64>,
    mode: Vec<u8>,
    p_safe: Vec<f64>,
    s_eff: Vec<f64>,
}

fn build_row(
    grid: &GridSpec,
    pop: &Population,
    params: &SystemParams,
    shielded: bool,
    state_index: usize,
) -> StateRow {
    let state = grid.state(state_index);
    let n_tar = grid.s_tar_points.len();
    let n_actions = grid.n_actions();

    let mut p_safe = Vec::with_capacity(n_tar);
    let mut s_eff = Vec::with_capacity(n_tar);
    for &s_tar in &grid.s_tar_points {
        let cap = guardrail::effective_capacity(&state, s_tar, params);
        s_eff.push(cap);
        p_safe.push(guardrail::safe_price(pop, cap, params).as_f64());
    }

    let mut row = StateRow {
        next: Vec::with_capacity(n_actions),
        reward: Vec::with_capacity(n_actions),
        exec_p: Vec::with_capacity(n_actions),
        mode: Vec::with_capacity(n_actions),
        p_safe,
        s_eff,
    };
    for action in 0..n_actions {
        let proposal = grid.action(action);
        let it = action % n_tar;
        let executed = if shielded {
            let cert = if row.p_safe[it].is_infinite() {
                SafePrice::Infinite
            } else {
                SafePrice::Finite(row.p_safe[it])
            };
            guardrail::shield_with(row.s_eff[it], cert, &proposal, params)
        } else {
            ShieldedAction {
                executed: proposal,
                mode: ShieldMode::Unchanged,
                p_safe: SafePrice::Finite(f64::NAN),
                s_eff: row.s_eff[it],
            }
        };
        let outcome = dynamics::step(&state, &executed.executed, pop, params);
        row.next
            .push(grid.nearest_state_index(&outcome.next_state) as u32);
        row.reward.push(outcome.reward);
        row.exec_p.push(executed.executed.p);
        row.mode.push(mode_to_u8(executed.mode));
    }
    row
}

/// Builds a table with the default execution mode.
pub fn build_table(
    grid: &GridSpec,
    pop: &Population,
    params: &SystemParams,
    shielded: bool,
) -> GuardedTable {
    build_table_mode(grid, pop, params, shielded, ExecMode::Auto)
}

/// Builds a table with an explicit sequential or parallel kernel.
pub fn build_table_mode(
    grid: &GridSpec,
    pop: &Population,
    params: &SystemParams,
    shielded: bool,
    mode: ExecMode,
) -> GuardedTable {
    let n_states = grid.n_states();
    let n_actions = grid.n_actions();
    let n_s_tar = grid.n_s_tar();
    let rows = parallel::map_indexed(mode, n_states, |i| {
        build_row(grid, pop, params, shielded, i)
    });

    let mut table = GuardedTable {
        shielded,
        next_index: Vec::with_capacity(n_states * n_actions),
        reward: Vec::with_capacity(n_states * n_actions),
        exec_p: Vec::with_capacity(n_states * n_actions),
        mode: Vec::with_capacity(n_states * n_actions),
        p_safe: Vec::with_capacity(n_states * n_s_tar),
        s_eff: Vec::with_capacity(n_states * n_s_tar),
        r_max: 0.0,
        n_states,
        n_actions,
        n_s_tar,
    };
    for row in rows {
        table.next_index.extend_from_slice(&row.next);
        table.reward.extend_from_slice(&row.reward);
        table.exec_p.extend_from_slice(&row.exec_p);
        table.mode.extend_from_slice(&row.mode);
        table.p_safe.extend_from_slice(&row.p_safe);
        table.s_eff.extend_from_slice(&row.s_eff);
    }
    table.r_max = table.reward.iter().fold(0.0, |acc, r| acc.max(r.abs()));
    table
}

impl GuardedTable {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        shielded: bool,
        n_states: usize,
        n_actions: usize,
        n_s_tar: usize,
        next_index: Vec<u32>,
        reward: Vec<f64>,
        exec_p: Vec<f64>,
        mode: Vec<u8>,
        p_safe: Vec<f64>,
        s_eff: Vec<f64>,
    ) -> Self {
        let r_max = reward.iter().fold(0.0, |acc: f64, r| acc.max(r.abs()));
        GuardedTable {
            shielded,
            next_index,
            reward,
            exec_p,
            mode,
            p_safe,
            s_eff,
            r_max,
            n_states,
            n_actions,
            n_s_tar,
        }
    }

    pub(crate) fn n_s_tar(&self) -> usize {
        self.n_s_tar
    }
}
