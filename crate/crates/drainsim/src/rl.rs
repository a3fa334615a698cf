//! Tabular Q-learning over the guarded tables, with safety accounting.
//!
//! Training draws transitions from a prebuilt deterministic table (the
//! shielded table for the shielded arm, the raw table otherwise), so
//! exploration is the only stochasticity. Each episode gets its own
//! counter-based stream of the seeded generator and every step consumes
//! exactly two draws, which keeps the shielded and unshielded arms on
//! identical exploration streams even when their episodes end at different
//! times. Greedy evaluations run off-grid on the continuous dynamics.

use crate::params::{Population, SystemParams, SystemState};
use crate::planner::grid::GridSpec;
use crate::planner::rollout::{offgrid_rollout, Rollout, RolloutOptions, ScheduledPopulation};
use crate::planner::table::GuardedTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Q-learning protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: u32,
    pub episode_len: u32,
    pub alpha: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    pub eval_every: u32,
    pub eval_len: u32,
    pub seed: u64,
    /// Grid state every training episode starts from.
    pub train_start: SystemState,
    /// Continuous state greedy evaluations start from.
    pub eval_start: SystemState,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 8000,
            episode_len: 200,
            alpha: 0.15,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.8,
            eval_every: 400,
            eval_len: 250,
            seed: 1,
            train_start: SystemState::new(0.0, 0.0, 0.0, 0.0),
            eval_start: SystemState::new(0.0, 2.0, 2.0, 1.0),
        }
    }
}

/// Exploration probability at a training episode: linear decay from
/// `eps_start` to `eps_end` across the first `eps_decay_fraction` of
/// training, constant afterwards.
pub fn epsilon_at(config: &TrainConfig, episode: u32) -> f64 {
    let decay_end = f64::from(config.episodes) * config.eps_decay_fraction;
    let e = f64::from(episode);
    if e >= decay_end || decay_end == 0.0 {
        config.eps_end
    } else {
        config.eps_start + (config.eps_end - config.eps_start) * (e / decay_end)
    }
}

/// Learned action values, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionValueTable {
    pub q_values: Vec<f64>,
    pub n_actions: usize,
}

impl ActionValueTable {
    fn zeros(n_states: usize, n_actions: usize) -> Self {
        ActionValueTable {
            q_values: vec![0.0; n_states * n_actions],
            n_actions,
        }
    }

    /// Greedy action at a state, ties toward the smaller index.
    pub fn greedy(&self, state: usize) -> usize {
        let row = &self.q_values[state * self.n_actions..(state + 1) * self.n_actions];
        let mut best = f64::NEG_INFINITY;
        let mut best_action = 0;
        for (action, &value) in row.iter().enumerate() {
            if value > best {
                best = value;
                best_action = action;
            }
        }
        best_action
    }

    /// State value `max_a Q(s, a)`.
    pub fn state_value(&self, state: usize) -> f64 {
        let row = &self.q_values[state * self.n_actions..(state + 1) * self.n_actions];
        row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }
}

/// Safety metrics recorded during training.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SafetyLog {
    /// Episode counts (1-based) at which greedy evaluations ran.
    pub eval_episodes: Vec<u32>,
    /// Unsafe executed steps in each greedy evaluation.
    pub unsafe_steps_per_eval: Vec<f64>,
    /// Discounted return of each greedy evaluation.
    pub returns_per_eval: Vec<f64>,
    /// Cumulative crash count after each training episode.
    pub cumulative_crashes: Vec<u64>,
}

impl SafetyLog {
    /// Cumulative crashes at the time of eval `i`.
    pub fn crashes_at_eval(&self, i: usize) -> u64 {
        let episode = self.eval_episodes[i] as usize;
        self.cumulative_crashes[episode - 1]
    }
}

/// Greedy rollout of a learned table on the continuous dynamics.
pub fn greedy_eval(
    qtable: &ActionValueTable,
    grid: &GridSpec,
    sched: &ScheduledPopulation,
    params: &SystemParams,
    s0: SystemState,
    length: u32,
    shielded: bool,
) -> Rollout {
    let opts = RolloutOptions {
        steps: length as usize,
        shielded,
        project: false,
        stop_on_crash: true,
        gamma: params.gamma,
    };
    offgrid_rollout(grid, |_, si| qtable.greedy(si), s0, sched, params, &opts)
}

/// Trains one arm on a guarded table.
///
/// The arm is shielded iff the table was built shielded; evaluations apply
/// the shield accordingly, so the ablation differs only in that flag.
pub fn train(
    table: &GuardedTable,
    grid: &GridSpec,
    pop: &Population,
    params: &SystemParams,
    config: &TrainConfig,
) -> (ActionValueTable, SafetyLog) {
    let n_states = table.n_states;
    let n_actions = table.n_actions;
    let boundary_q = grid.q_points.len() - 1;
    let start = grid.nearest_state_index(&config.train_start);
    let sched = ScheduledPopulation::steady(pop.clone());

    let mut qtable = ActionValueTable::zeros(n_states, n_actions);
    let mut log = SafetyLog::default();
    let mut crashes = 0u64;

    for episode in 0..config.episodes {
        let eps = epsilon_at(config, episode);
        // one counter-based stream per episode: arms trained with the same
        // seed consume identical exploration randomness episode-for-episode
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(u64::from(episode) + 1);

        let mut state = start;
        for _ in 0..config.episode_len {
            // both draws happen unconditionally to keep streams aligned
            let coin: f64 = rng.gen();
            let random_action = rng.gen_range(0..n_actions);
            let action = if coin < eps {
                random_action
            } else {
                qtable.greedy(state)
            };

            let pair = state * n_actions + action;
            let next = table.next_index[pair] as usize;
            let reward = table.reward[pair];
            let crashed = grid.q_axis_index(next) == boundary_q;

            // crashes are terminal: no bootstrap through the boundary
            let target = if crashed {
                reward
            } else {
                reward + params.gamma * qtable.state_value(next)
            };
            let slot = &mut qtable.q_values[pair];
            *slot += config.alpha * (target - *slot);

            if crashed {
                crashes += 1;
                break;
            }
            state = next;
        }
        log.cumulative_crashes.push(crashes);

        if (episode + 1) % config.eval_every == 0 {
            let eval = greedy_eval(
                &qtable,
                grid,
                &sched,
                params,
                config.eval_start,
                config.eval_len,
                table.shielded,
            );
            log.eval_episodes.push(episode + 1);
            log.unsafe_steps_per_eval.push(eval.unsafe_steps as f64);
            log.returns_per_eval.push(eval.discounted_return);
        }
    }

    (qtable, log)
}

/// One arm's per-step burst trace row.
#[derive(Debug, Clone, Copy)]
pub struct BurstRow {
    pub t: usize,
    pub q: f64,
    pub s: f64,
    pub p_exec: f64,
    /// Time-varying safe-price threshold at the executed action's effective
    /// capacity (`inf` only when even that action cannot certify).
    pub p_safe_threshold: f64,
    pub w_scale: f64,
}

/// Paired burst traces for both arms.
#[derive(Debug, Clone)]
pub struct BurstTraces {
    pub shielded: Vec<BurstRow>,
    pub unshielded: Vec<BurstRow>,
}

/// Burst protocol parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstConfig {
    pub t_start: usize,
    pub t_end: usize,
    pub factor: f64,
    pub s0: SystemState,
    pub length: usize,
}

impl Default for BurstConfig {
    fn default() -> Self {
        BurstConfig {
            t_start: 40,
            t_end: 70,
            factor: 3.0,
            s0: SystemState::new(0.0, 2.0, 2.0, 1.0),
            length: 140,
        }
    }
}

/// Runs both trained greedy policies through the burst scenario.
///
/// The shielded arm recomputes the guardrail under the scheduled weights
/// each step; both traces run to full length (crashes clamp and continue)
/// so the figures show the whole response.
pub fn burst_eval(
    q_shielded: &ActionValueTable,
    q_unshielded: &ActionValueTable,
    grid: &GridSpec,
    pop: &Population,
    params: &SystemParams,
    burst: &BurstConfig,
) -> BurstTraces {
    let sched = ScheduledPopulation::burst(pop.clone(), burst.factor, burst.t_start, burst.t_end);
    let run = |qtable: &ActionValueTable, shielded: bool| -> Vec<BurstRow> {
        let opts = RolloutOptions {
            steps: burst.length,
            shielded,
            project: false,
            stop_on_crash: false,
            gamma: params.gamma,
        };
        let rollout = offgrid_rollout(
            grid,
            |_, si| qtable.greedy(si),
            burst.s0,
            &sched,
            params,
            &opts,
        );
        rollout
            .steps
            .iter()
            .map(|r| BurstRow {
                t: r.t,
                q: r.state.q,
                s: r.state.s,
                p_exec: r.executed.p,
                p_safe_threshold: r.p_safe.as_f64(),
                w_scale: r.w_scale,
            })
            .collect()
    };
    BurstTraces {
        shielded: run(q_shielded, true),
        unshielded: run(q_unshielded, false),
    }
}
