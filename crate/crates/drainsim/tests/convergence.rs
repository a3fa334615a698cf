//! Fixed-pair backlog convergence: the bisection operating point is the
//! long-run limit of the fluid recursion, the approach is monotone once
//! the absorbing interval is entered, and entry happens within the
//! slack-driven time bound.

use drainsim::guardrail::{absorbing_interval, certify, operating_point, simulate_fixed_pair};
use drainsim::params::{Population, SystemParams};

const PAIRS: [(f64, f64); 2] = [(4.0, 2.0), (6.0, 4.0)];

fn instance() -> (Population, SystemParams) {
    (Population::baseline(), SystemParams::baseline())
}

/// Initial backlogs spanning [0, 100] around the drop threshold.
fn spanning_starts(q_drop: f64) -> [f64; 4] {
    [0.0, 0.5 * q_drop, 2.0 * q_drop, 100.0]
}

#[test]
fn bisection_matches_the_long_run_limit_from_spanning_starts() {
    let (pop, params) = instance();
    for (p, s) in PAIRS {
        let report = certify(&pop, p, s, &params);
        let op = operating_point(&pop, p, s, &params, 1e-12).unwrap();
        for q0 in spanning_starts(report.q_drop) {
            let trajectory = simulate_fixed_pair(q0, &pop, p, s, &params, 2000);
            let last = *trajectory.last().unwrap();
            assert!(
                (last - op.q_star).abs() <= 1e-8,
                "({p},{s}) from {q0}: limit {last} vs fixed point {}",
                op.q_star
            );
        }
    }
}

#[test]
fn tail_is_monotone_after_entering_the_absorbing_interval() {
    let (pop, params) = instance();
    for (p, s) in PAIRS {
        let interval_end = absorbing_interval(&pop, p, s, &params);
        let op = operating_point(&pop, p, s, &params, 1e-12).unwrap();
        for q0 in spanning_starts(certify(&pop, p, s, &params).q_drop) {
            let trajectory = simulate_fixed_pair(q0, &pop, p, s, &params, 2000);
            let entry = trajectory
                .iter()
                .position(|&q| q <= interval_end)
                .expect("the trajectory reaches the absorbing interval");
            let tail = &trajectory[entry..];
            // the one-step map never overshoots (delta·L <= 1), so the tail
            // approaches the fixed point from one side
            let from_above = tail[0] >= op.q_star;
            for w in tail.windows(2) {
                if from_above {
                    assert!(w[1] <= w[0] + 1e-12, "({p},{s}) from {q0}: tail rose");
                    assert!(w[1] >= op.q_star - 1e-9);
                } else {
                    assert!(w[1] >= w[0] - 1e-12, "({p},{s}) from {q0}: tail fell");
                    assert!(w[1] <= op.q_star + 1e-9);
                }
            }
        }
    }
}

#[test]
fn residual_slack_bounds_the_entry_time() {
    let (pop, params) = instance();
    for (p, s) in PAIRS {
        let report = certify(&pop, p, s, &params);
        let q0 = 100.0;
        // above the drop threshold the descent rate is exactly the slack
        let steps = ((q0 - report.q_drop) / (params.delta * report.slack)).ceil() as usize + 1;
        let trajectory = simulate_fixed_pair(q0, &pop, p, s, &params, steps);
        assert!(
            trajectory[steps] <= report.q_drop + 1e-9,
            "({p},{s}): backlog {} above the drop threshold {} after {steps} steps",
            trajectory[steps],
            report.q_drop
        );
    }
}

#[test]
fn trajectories_never_leave_the_absorbing_interval() {
    let (pop, params) = instance();
    for (p, s) in PAIRS {
        let interval_end = absorbing_interval(&pop, p, s, &params);
        for q0 in [0.0, 0.3 * interval_end, 0.9 * interval_end] {
            let trajectory = simulate_fixed_pair(q0, &pop, p, s, &params, 500);
            for (t, &q) in trajectory.iter().enumerate() {
                assert!(
                    q <= interval_end + 1e-12,
                    "({p},{s}) from {q0}: left the interval at t={t} with q={q}"
                );
                assert!(q >= 0.0);
            }
        }
    }
}

#[test]
fn frozen_interior_operating_point() {
    let (pop, params) = instance();
    let op = operating_point(&pop, 4.0, 2.0, &params, 1e-12).unwrap();
    assert!(!op.at_zero);
    // independently computed equilibrium of the (p=4, s=2) demand balance
    assert!(
        (op.q_star - 2.654664396226437).abs() <= 1e-8,
        "q* drifted: {}",
        op.q_star
    );
}

#[test]
fn high_price_pair_rests_at_zero() {
    let (pop, params) = instance();
    let op = operating_point(&pop, 6.0, 4.0, &params, 1e-12).unwrap();
    assert!(op.at_zero);
    assert_eq!(op.q_star, 0.0);
    let trajectory = simulate_fixed_pair(100.0, &pop, 6.0, 4.0, &params, 200);
    assert_eq!(*trajectory.last().unwrap(), 0.0);
}

#[test]
fn sufficient_lipschitz_bound_certifies_the_heavy_pair() {
    let (pop, params) = instance();
    let report = certify(&pop, 6.0, 4.0, &params);
    let expected = 22.8 / ((4.0 * 0.8 + 0.1) * 36.0);
    assert!(
        (report.lipschitz_bound - expected).abs() <= 1e-12,
        "bound {} vs closed form {expected}",
        report.lipschitz_bound
    );
    assert!(report.step_ok);
}
