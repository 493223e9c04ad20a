//! End-to-end learner behavior on the benchmark environments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use osvi::envs::{build_cliffwalk, build_two_state, sample_transition, CLIFFWALK_START};
use osvi::experiment::{
    run_experiment, AlgorithmSpec, EnvSpec, ExperimentConfig, ModelSpec, RhoSpec, SamplingMode,
};
use osvi::learners::{presets, QLearning, Sample, TdLearning};
use osvi::mdp::Mode;
use osvi::solvers::{solve_control_exact, solve_pe_direct};

/// TD(0) with the constant step size reaches 10% normalized error on the
/// two-state problem well inside the step budget. A constant step size
/// leaves persistent noise, so the check is on the first hit.
#[test]
fn td_constant_rate_reaches_ten_percent_error() {
    let two = build_two_state();
    let v_pi = solve_pe_direct(&two.mdp, &two.policy).unwrap();
    let ref_l1: f64 = v_pi.iter().map(|v| v.abs()).sum();
    let mut td = TdLearning::new(&two.policy, 1, 0.9, presets::td_constant()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut first_hit = None;
    for t in 1..=200_000u64 {
        let x = rng.random_range(0..2);
        let (r, next) = sample_transition(&two.mdp, x, 0, &mut rng).unwrap();
        td.step(&Sample {
            state: x,
            action: 0,
            reward: r,
            next_state: next,
        })
        .unwrap();
        let err: f64 = td
            .state
            .state_values()
            .iter()
            .zip(v_pi.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / ref_l1;
        if err < 0.1 {
            first_hit = Some(t);
            break;
        }
    }
    let hit = first_hit.expect("TD never reached 10% normalized error in 2e5 steps");
    assert!(hit <= 200_000, "first hit at {hit}");
}

/// Q-learning with the delayed-decay schedule reported for the cliffwalk
/// reaches a near-optimal start-state return in most seeds. The decay tail
/// freezes the Q table with its residual noise, so an occasional seed locks
/// in a wrong action near the cliff; the claim is a majority one.
#[test]
fn q_learning_reaches_near_optimal_start_value_in_most_seeds() {
    let (mdp, _) = build_cliffwalk();
    let (v_star, _) = solve_control_exact(&mdp).unwrap();
    let mut hits = 0;
    for seed in 0..6u64 {
        let mut q = QLearning::new(36, 4, 0.9, presets::q_learning_delayed()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200_000u64 {
            let x = rng.random_range(0..36);
            let a = rng.random_range(0..4);
            let (r, next) = sample_transition(&mdp, x, a, &mut rng).unwrap();
            q.step(&Sample {
                state: x,
                action: a,
                reward: r,
                next_state: next,
            })
            .unwrap();
        }
        let v_pi = solve_pe_direct(&mdp, &q.greedy_policy()).unwrap();
        if v_star[CLIFFWALK_START] - v_pi[CLIFFWALK_START] <= 0.1 {
            hits += 1;
        }
    }
    assert!(hits >= 4, "near-optimal in only {hits}/6 seeds");
}

/// The harness runs a short OS-Dyna PE experiment end to end and records a
/// decreasing error series.
#[test]
fn harness_runs_osdyna_pe_on_two_state() {
    let config = ExperimentConfig {
        environment: EnvSpec::TwoState,
        algorithm: AlgorithmSpec::OsDyna,
        mode: Mode::Pe,
        model: ModelSpec::Mle,
        schedule: None,
        planner_iters: 100,
        tol: 0.0,
        inner_backups: None,
        steps: 40_000,
        seeds: vec![3],
        record_every: 1_000,
        rho: RhoSpec::Uniform,
        sampling: SamplingMode::Uniform,
        out: None,
    };
    let out = run_experiment(&config).unwrap();
    let errs = out.runs[0].series("normalized_error");
    assert!(!errs.is_empty());
    let last = errs.last().unwrap().1;
    assert!(last < 0.2, "final normalized error {last}");
    assert!(last < errs.first().unwrap().1);
}

/// Trajectory-mode sampling is exposed behind a flag and stays deterministic.
#[test]
fn trajectory_sampling_runs() {
    let config = ExperimentConfig {
        environment: EnvSpec::TwoState,
        algorithm: AlgorithmSpec::Td,
        mode: Mode::Pe,
        model: ModelSpec::Exact,
        schedule: None,
        planner_iters: 100,
        tol: 0.0,
        inner_backups: None,
        steps: 5_000,
        seeds: vec![1],
        record_every: 1_000,
        rho: RhoSpec::Uniform,
        sampling: SamplingMode::Trajectory,
        out: None,
    };
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a.runs[0].records, b.runs[0].records);
}
