use steap::runtime::{compute_metrics, run, Mode, Problem, ProblemSpec, RunRecord, SimConfig};
use steap::{local_coordinates, Trajectory};

fn empty_problem() -> Problem {
    Problem::new(ProblemSpec::default()).unwrap()
}

fn noiseless(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        ..SimConfig::default()
    }
}

fn max_config_diff(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(x, y)| local_coordinates(&x.config, &y.config).unwrap().amax())
        .fold(0.0, f64::max)
}

#[test]
fn noiseless_steap_reaches_the_goal() {
    let rec = run(Mode::Steap, &empty_problem(), &noiseless(0)).unwrap();
    let m = compute_metrics(&rec).unwrap();
    assert!(rec.success, "{:?}", rec.failure);
    assert!(m.goal_err_trans <= 1e-3 && m.goal_err_rot <= 1e-3);
    assert_eq!(rec.steps.len(), 30);
    assert!(rec.steps.iter().all(|s| s.reeliminated.is_some()));
    assert!(m.est_err_trans.unwrap() < 1e-3);
}

#[test]
fn noiseless_open_loop_follows_its_plan() {
    let rec = run(Mode::OpenLoop, &empty_problem(), &noiseless(0)).unwrap();
    assert!(rec.success);
    assert!(rec.estimated.is_none());
    assert_eq!(rec.planned_per_step.len(), 1);
    // Execution starts at the exact start; the plan's first state is only softly anchored.
    let d = max_config_diff(&rec.ground_truth, &rec.planned_per_step[0]);
    assert!(d < 1e-5, "{d}");
    let m = compute_metrics(&rec).unwrap();
    assert!(m.est_err_trans.is_none() && m.meas_err_trans.is_none());
}

#[test]
fn slap_replans_over_a_shrinking_horizon() {
    let rec = run(Mode::Slap, &empty_problem(), &noiseless(0)).unwrap();
    assert!(rec.success, "{:?}", rec.failure);
    let lens: Vec<usize> = rec.planned_per_step.iter().map(Trajectory::len).collect();
    assert_eq!(lens[0], 31);
    assert!(lens.windows(2).all(|w| w[1] < w[0] || w[1] == 1));
    assert!(compute_metrics(&rec).unwrap().goal_err_trans < 1e-3);
}

#[test]
fn noisy_runs_are_deterministic() {
    let problem = empty_problem();
    let sim = SimConfig {
        n_dyn: 0.1,
        n_cam: 0.05,
        seed: 11,
        exec_substeps: 10,
    };
    for mode in Mode::ALL {
        let a = run(mode, &problem, &sim).unwrap();
        let b = run(mode, &problem, &sim).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth, "{mode}");
        assert_eq!(a.estimated, b.estimated, "{mode}");
        let ha: Vec<_> = a.steps.iter().map(|s| &s.plan_hash).collect();
        let hb: Vec<_> = b.steps.iter().map(|s| &s.plan_hash).collect();
        assert_eq!(ha, hb, "{mode}");
    }
}

#[test]
fn steap_estimate_beats_raw_measurements() {
    let problem = empty_problem();
    let sim = SimConfig {
        n_dyn: 0.1,
        n_cam: 0.1,
        seed: 3,
        exec_substeps: 10,
    };
    let m = compute_metrics(&run(Mode::Steap, &problem, &sim).unwrap()).unwrap();
    assert!(m.est_err_trans.unwrap() < m.meas_err_trans.unwrap());
}

#[test]
fn record_json_round_trip() {
    let sim = SimConfig {
        n_dyn: 0.05,
        n_cam: 0.02,
        seed: 4,
        exec_substeps: 5,
    };
    let rec = run(Mode::Steap, &empty_problem(), &sim).unwrap();
    let back = RunRecord::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(rec, back);
}

#[test]
fn invalid_sim_config_is_rejected() {
    let sim = SimConfig {
        n_dyn: -1.0,
        ..SimConfig::default()
    };
    assert!(run(Mode::OpenLoop, &empty_problem(), &sim).is_err());
}
