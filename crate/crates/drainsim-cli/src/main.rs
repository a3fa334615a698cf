//! `drainsim` command line: certificates, planning, and the experiment
//! suite, all driven by one TOML configuration.

use anyhow::Context;
use clap::{Parser, Subcommand};
use drainsim::config::ExperimentConfig;
use drainsim::experiments::{
    run_all, run_exp1, run_exp2, run_exp3, run_exp4, ArtifactStore, EXP1_GAP_CSV, EXP2_GAP_CSV,
    EXP2_TRAJ_CSV, EXP3_SAFETY_CSV, EXP4_BURST_CSV,
};
use drainsim::guardrail;
use drainsim::params::SystemState;
use drainsim::parallel::ExecMode;
use drainsim::planner::solve::{backward_dp, truncation_bound};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "drainsim",
    version,
    about = "Closed-loop pricing and scaling: certificates, plans, experiments"
)]
struct Cli {
    /// TOML experiment configuration; baseline defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override; also rebases the learning seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the drainability certificate for a fixed price and capacity
    Certify {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        s: f64,
    },
    /// Locate the equilibrium backlog for a drainable price and capacity
    OperatingPoint {
        #[arg(long)]
        p: f64,
        #[arg(long)]
        s: f64,
        /// Bisection tolerance on the demand-service residual
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Build and persist the guarded transition tables
    BuildTables {
        /// Also build the unshielded ablation table
        #[arg(long)]
        unshielded: bool,
    },
    /// Solve the discounted fixed point on the shielded table
    PlanVi,
    /// Evaluate the horizon-H plan on the shielded table
    PlanDp {
        #[arg(long)]
        h: u32,
    },
    /// Horizon-truncation study
    Exp1,
    /// Deployment-gap study
    Exp2,
    /// Learning-safety ablation
    Exp3,
    /// Burst stress test
    Exp4,
    /// All experiments plus the output manifest
    All,
    /// Stream a fixed price/capacity backlog trajectory as CSV
    Simulate {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        s: f64,
        #[arg(long, default_value_t = 0.0)]
        q0: f64,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        config.rl.seed = seed;
    }
    if let Some(out) = cli.out {
        config.output_dir = out;
    }

    match cli.command {
        Command::Certify { p, s } => {
            let pop = config.population()?;
            let report = guardrail::certify(&pop, p, s, &config.system);
            println!("p={p}");
            println!("s={s}");
            println!("residual_floor={}", report.residual_floor);
            println!("service_rate={}", report.service_rate);
            println!("slack={}", report.slack);
            println!("drainable={}", report.drainable);
            println!("q_drop={}", report.q_drop);
            println!("demand_cap={}", report.demand_cap);
            println!("lipschitz_bound={}", report.lipschitz_bound);
            println!("step_ok={}", report.step_ok);
            match guardrail::safe_price(&pop, s, &config.system) {
                guardrail::SafePrice::Finite(p_safe) => println!("p_safe={p_safe}"),
                guardrail::SafePrice::Infinite => println!("p_safe=inf"),
            }
        }
        Command::OperatingPoint { p, s, tol } => {
            let pop = config.population()?;
            let op = guardrail::operating_point(&pop, p, s, &config.system, tol)
                .context("the pair admits no operating point")?;
            println!("p={p}");
            println!("s={s}");
            println!("q_star={}", op.q_star);
            println!("at_zero={}", op.at_zero);
            println!("iterations={}", op.iterations);
            println!("residual={:e}", op.residual);
        }
        Command::BuildTables { unshielded } => {
            let mut store = ArtifactStore::new(config)?;
            let table = store.table(true)?;
            println!(
                "shielded table: {} states x {} actions",
                table.n_states, table.n_actions
            );
            if unshielded {
                let raw = store.table(false)?;
                println!(
                    "unshielded table: {} states x {} actions",
                    raw.n_states, raw.n_actions
                );
            }
            println!("artifacts: {}", store.config().output_dir.join("artifacts").display());
        }
        Command::PlanVi => {
            let mut store = ArtifactStore::new(config)?;
            let plan = store.plan()?;
            let start = store
                .grid()
                .nearest_state_index(&SystemState::new(0.0, 0.0, 0.0, 0.0));
            println!("states={}", plan.vi.values.len());
            println!("checkpoints={}", plan.checkpoints.len());
            println!("v_start={}", plan.vi.values[start]);
        }
        Command::PlanDp { h } => {
            anyhow::ensure!(h >= 1, "the horizon must be at least 1");
            let mut store = ArtifactStore::new(config)?;
            let plan = store.plan()?;
            let gamma = store.config().system.gamma;
            let start = store
                .grid()
                .nearest_state_index(&SystemState::new(0.0, 0.0, 0.0, 0.0));
            let cached = plan.checkpoints.iter().find(|c| c.h == h).cloned();
            let solution = match cached {
                Some(checkpoint) => checkpoint.plan,
                None => {
                    let table = store.table(true)?;
                    backward_dp(&table, gamma, h, ExecMode::Auto)
                }
            };
            let table = store.table(true)?;
            println!("h={h}");
            println!("v_start={}", solution.values[start]);
            println!("v_start_fixed_point={}", plan.vi.values[start]);
            println!("truncation_bound={:e}", truncation_bound(&table, gamma, h));
        }
        Command::Exp1 => {
            let mut store = ArtifactStore::new(config)?;
            let rows = run_exp1(&mut store)?;
            done(store.config(), EXP1_GAP_CSV, rows.len());
        }
        Command::Exp2 => {
            let mut store = ArtifactStore::new(config)?;
            let out = run_exp2(&mut store)?;
            done(store.config(), EXP2_GAP_CSV, out.gaps.len());
            done(store.config(), EXP2_TRAJ_CSV, out.traj.len());
        }
        Command::Exp3 => {
            let mut store = ArtifactStore::new(config)?;
            let rows = run_exp3(&mut store)?;
            done(store.config(), EXP3_SAFETY_CSV, rows.len());
        }
        Command::Exp4 => {
            let mut store = ArtifactStore::new(config)?;
            let rows = run_exp4(&mut store)?;
            done(store.config(), EXP4_BURST_CSV, rows.len());
        }
        Command::All => {
            let summary = run_all(&config)?;
            println!(
                "exp1={} exp2={}+{} exp3={} exp4={} rows",
                summary.exp1.len(),
                summary.exp2.gaps.len(),
                summary.exp2.traj.len(),
                summary.exp3.len(),
                summary.exp4.len()
            );
            println!("manifest: {}", summary.manifest_path.display());
        }
        Command::Simulate { steps, p, s, q0 } => {
            let pop = config.population()?;
            let trajectory =
                guardrail::simulate_fixed_pair(q0, &pop, p, s, &config.system, steps);
            println!("t,q");
            for (t, q) in trajectory.iter().enumerate() {
                println!("{t},{q:.16e}");
            }
        }
    }
    Ok(())
}

fn done(config: &ExperimentConfig, name: &str, rows: usize) {
    println!("{name}: {rows} rows -> {}", config.output_dir.join(name).display());
}
