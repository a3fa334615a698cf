//! End-to-end harness behavior on a miniature configuration: schema
//! stability, manifest integrity, and config round-trip reproducibility.

use drainsim::config::{ExperimentConfig, OffgridConfig, PlanningConfig};
use drainsim::experiments::{
    run_all, CONFIG_DUMP, EXP1_GAP_CSV, EXP2_GAP_CSV, EXP2_TRAJ_CSV, EXP3_SAFETY_CSV,
    EXP4_BURST_CSV,
};
use drainsim::planner::GridConfig;
use drainsim::rl::{BurstConfig, TrainConfig};
use std::path::Path;

fn mini_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        output_dir: out.to_path_buf(),
        grid: GridConfig {
            q_fine_max: 2.0,
            q_fine_step: 1.0,
            q_coarse_step: 12.0,
            s_step: 2.0,
            b_step: 1.5,
            p_step: 1.0,
            s_tar_step: 2.0,
        },
        planning: PlanningConfig {
            h_sweep: vec![1, 2, 4, 8],
            h_check: vec![2, 4],
            h_ref: 4,
            vi_tol: 1e-8,
            max_sweeps: 5000,
            dp_h: 8,
        },
        offgrid: OffgridConfig {
            n_samples: 4,
            perturbation: 5.0,
            t_eval: 50,
            traj_len: 20,
        },
        rl: TrainConfig {
            episodes: 40,
            episode_len: 20,
            eval_every: 20,
            eval_len: 15,
            ..TrainConfig::default()
        },
        burst: BurstConfig {
            t_start: 6,
            t_end: 12,
            length: 25,
            ..BurstConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn first_line(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn csv_headers_match_the_declared_schemas() {
    let dir = tempfile::tempdir().unwrap();
    run_all(&mini_config(dir.path())).unwrap();
    let expect = [
        (EXP1_GAP_CSV, "H,load_label,gap,reference"),
        (EXP2_GAP_CSV, "H,gap_off"),
        (EXP2_TRAJ_CSV, "t,policy,backlog"),
        (
            EXP3_SAFETY_CSV,
            "eval_episode,arm,mean_unsafe,cumulative_crashes,return",
        ),
        (EXP4_BURST_CSV, "t,arm,Q,S,P_exec,P_safe_threshold,w_scale"),
    ];
    for (name, header) in expect {
        assert_eq!(first_line(&dir.path().join(name)), header, "{name}");
    }
}

#[test]
fn manifest_lists_every_output_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_all(&mini_config(dir.path())).unwrap();
    let manifest = std::fs::read_to_string(summary.manifest_path).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(lines[0], "seed\t1");
    let named: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split_once('\t').unwrap().0)
        .collect();
    assert_eq!(
        named,
        [
            CONFIG_DUMP,
            EXP1_GAP_CSV,
            EXP2_GAP_CSV,
            EXP2_TRAJ_CSV,
            EXP3_SAFETY_CSV,
            EXP4_BURST_CSV
        ]
    );
    for line in &lines[1..] {
        let (_, hash) = line.split_once('\t').unwrap();
        assert_eq!(hash.len(), 64);
        assert!(hash.chars().all(|c| c.is_ascii_hexdigit()));
    }
}

#[test]
fn rerunning_from_the_effective_dump_reproduces_the_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = mini_config(dir.path());
    run_all(&config).unwrap();

    let dump_path = dir.path().join(CONFIG_DUMP);
    let mut reloaded = ExperimentConfig::load(&dump_path).unwrap();
    assert_eq!(reloaded, config, "effective dump drifted from the source");

    // run the reloaded config into a fresh directory and compare outputs
    let dir2 = tempfile::tempdir().unwrap();
    reloaded.output_dir = dir2.path().to_path_buf();
    run_all(&reloaded).unwrap();
    for name in [
        EXP1_GAP_CSV,
        EXP2_GAP_CSV,
        EXP2_TRAJ_CSV,
        EXP3_SAFETY_CSV,
        EXP4_BURST_CSV,
    ] {
        let a = std::fs::read(dir.path().join(name)).unwrap();
        let b = std::fs::read(dir2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} not reproduced from the dump");
    }
}

#[test]
fn shielded_arm_reports_zero_unsafe_steps_even_at_mini_scale() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run_all(&mini_config(dir.path())).unwrap();
    let shielded: Vec<_> = summary
        .exp3
        .iter()
        .filter(|r| r.arm == "shielded")
        .collect();
    assert!(!shielded.is_empty());
    assert!(shielded.iter().all(|r| r.mean_unsafe == 0.0));
    // burst weights follow the window in the recorded trace
    for row in &summary.exp4 {
        let expected = if row.t >= 6 && row.t < 12 { 3.0 } else { 1.0 };
        assert_eq!(row.w_scale, expected);
    }
}
