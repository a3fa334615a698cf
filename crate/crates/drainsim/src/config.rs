//! TOML experiment configuration.
//!
//! Every field has a baseline default, so an empty file reproduces the
//! reference experiments and a config may override any subset. `load`
//! validates ranges and cross-field requirements before anything runs.

use crate::params::{Population, PopulationError, RangeError, SystemParams, TenantType};
use crate::planner::grid::GridConfig;
use crate::rl::{BurstConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Horizon sweeps and solver limits for the planning experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanningConfig {
    /// Horizons at which finite-horizon values are compared to the fixed
    /// point.
    pub h_sweep: Vec<u32>,
    /// Horizons at which the truncation bound is checked on every state.
    pub h_check: Vec<u32>,
    /// Anchor horizon for the geometric reference curve.
    pub h_ref: u32,
    pub vi_tol: f64,
    pub max_sweeps: u32,
    /// Horizon of the finite-horizon policy used in the deployment
    /// comparison.
    pub dp_h: u32,
}

impl Default for PlanningConfig {
    fn default() -> Self {
        PlanningConfig {
            h_sweep: vec![1, 2, 5, 10, 20, 40, 60, 100, 150, 200, 300, 400],
            h_check: vec![20, 60, 150],
            h_ref: 60,
            vi_tol: 1e-9,
            max_sweeps: 5000,
            dp_h: 150,
        }
    }
}

/// Off-grid evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OffgridConfig {
    /// Number of perturbed starting states.
    pub n_samples: u32,
    /// Half-width of the uniform backlog perturbation.
    pub perturbation: f64,
    /// Rollout length for discounted-return estimates.
    pub t_eval: u32,
    /// Length of the recorded deployment trajectories.
    pub traj_len: u32,
}

impl Default for OffgridConfig {
    fn default() -> Self {
        OffgridConfig {
            n_samples: 30,
            perturbation: 5.0,
            t_eval: 1500,
            traj_len: 120,
        }
    }
}

/// Root experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed; the command line may override it, which also rebases
    /// the learning seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub system: SystemParams,
    pub tenants: Vec<TenantType>,
    pub grid: GridConfig,
    pub planning: PlanningConfig,
    pub offgrid: OffgridConfig,
    pub rl: TrainConfig,
    pub burst: BurstConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            system: SystemParams::baseline(),
            tenants: Population::baseline().types().to_vec(),
            grid: GridConfig::default(),
            planning: PlanningConfig::default(),
            offgrid: OffgridConfig::default(),
            rl: TrainConfig::default(),
            burst: BurstConfig::default(),
        }
    }
}

/// Problem found while reading or validating a configuration.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error(transparent)]
    Params(#[from] RangeError),
    #[error(transparent)]
    Tenants(#[from] PopulationError),
    #[error("config field `{field}`: {problem}")]
    Field {
        field: &'static str,
        problem: String,
    },
}

fn field_err(field: &'static str, problem: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        problem: problem.into(),
    }
}

impl ExperimentConfig {
    /// Reads, parses, and validates a TOML config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source: Box::new(source),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field validation; `load` always runs this.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system.validated()?;
        self.population()?;

        let sweep = &self.planning.h_sweep;
        if sweep.is_empty() {
            return Err(field_err("planning.h_sweep", "must not be empty"));
        }
        if !sweep.windows(2).all(|w| w[0] < w[1]) {
            return Err(field_err(
                "planning.h_sweep",
                "must be strictly increasing",
            ));
        }
        if sweep[0] == 0 {
            return Err(field_err("planning.h_sweep", "horizons start at 1"));
        }
        if !sweep.contains(&self.planning.h_ref) {
            return Err(field_err(
                "planning.h_ref",
                format!("{} is not in h_sweep", self.planning.h_ref),
            ));
        }
        if self.planning.dp_h == 0 {
            return Err(field_err("planning.dp_h", "must be at least 1"));
        }
        if !(self.planning.vi_tol > 0.0 && self.planning.vi_tol.is_finite()) {
            return Err(field_err("planning.vi_tol", "must be positive and finite"));
        }
        let deepest = *sweep
            .last()
            .unwrap()
            .max(self.planning.h_check.iter().max().unwrap_or(&0))
            .max(&self.planning.dp_h);
        if self.planning.max_sweeps < deepest {
            return Err(field_err(
                "planning.max_sweeps",
                format!("{} is below the deepest horizon {deepest}", self.planning.max_sweeps),
            ));
        }

        if self.offgrid.n_samples == 0 {
            return Err(field_err("offgrid.n_samples", "must be at least 1"));
        }
        if self.offgrid.t_eval == 0 || self.offgrid.traj_len == 0 {
            return Err(field_err("offgrid", "rollout lengths must be at least 1"));
        }
        if !(self.offgrid.perturbation >= 0.0 && self.offgrid.perturbation.is_finite()) {
            return Err(field_err(
                "offgrid.perturbation",
                "must be nonnegative and finite",
            ));
        }

        if self.rl.episodes == 0 || self.rl.episode_len == 0 {
            return Err(field_err("rl", "episodes and episode_len must be at least 1"));
        }
        if self.rl.eval_every == 0 {
            return Err(field_err("rl.eval_every", "must be at least 1"));
        }
        if !(self.rl.alpha > 0.0 && self.rl.alpha <= 1.0) {
            return Err(field_err("rl.alpha", "must lie in (0, 1]"));
        }
        for (name, eps) in [("rl.eps_start", self.rl.eps_start), ("rl.eps_end", self.rl.eps_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(field_err(name, "must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.rl.eps_decay_fraction) {
            return Err(field_err("rl.eps_decay_fraction", "must lie in [0, 1]"));
        }

        if self.burst.t_start > self.burst.t_end {
            return Err(field_err("burst", "t_start must not exceed t_end"));
        }
        if self.burst.length == 0 {
            return Err(field_err("burst.length", "must be at least 1"));
        }
        if !(self.burst.factor > 0.0 && self.burst.factor.is_finite()) {
            return Err(field_err("burst.factor", "must be positive and finite"));
        }
        Ok(())
    }

    /// Validated tenant population.
    pub fn population(&self) -> Result<Population, PopulationError> {
        Population::new(self.tenants.clone())
    }

    /// Effective configuration as TOML, for reproducibility dumps.
    pub fn dump(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
