//! Property tests for the operator and model invariants.

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;

use osvi::envs::{build_cliffwalk, build_two_state};
use osvi::learners::Schedule;
use osvi::linalg::inf_norm_vec;
use osvi::mdp::{bellman_control, bellman_pe, induce_kernel, Policy, TabularMdp, PROB_TOL};
use osvi::model::{selfloop_model, smooth_model, smooth_rows};
use osvi::splitting::{splitting_solve, SplittingScheme};
use osvi::trajectory::{read_csv, write_csv, RunTrajectory};

fn value_vec(n: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(-50.0..50.0f64, n).prop_map(Array1::from_vec)
}

/// Random stochastic row of the given length.
fn prob_row(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01..1.0f64, n).prop_map(|raw| {
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    })
}

fn random_mdp(n: usize, na: usize) -> impl Strategy<Value = TabularMdp> {
    (
        prop::collection::vec(prob_row(n), n * na),
        prop::collection::vec(-5.0..5.0f64, n * na),
        0.3..0.95f64,
    )
        .prop_map(move |(rows, rewards, discount)| {
            let mut t = Array3::zeros((n, na, n));
            for (i, row) in rows.iter().enumerate() {
                for (y, &p) in row.iter().enumerate() {
                    t[[i / na, i % na, y]] = p;
                }
            }
            let r = Array2::from_shape_vec((n, na), rewards).unwrap();
            TabularMdp::new(t, r, discount).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// sup-norm contraction of both Bellman operators by the discount.
    #[test]
    fn bellman_operators_contract(v1 in value_vec(36), v2 in value_vec(36)) {
        let (mdp, policy) = build_cliffwalk();
        let gamma = mdp.discount();
        let d = inf_norm_vec(&(&v1 - &v2));

        let t1 = bellman_pe(&mdp, &policy, &v1).unwrap();
        let t2 = bellman_pe(&mdp, &policy, &v2).unwrap();
        prop_assert!(inf_norm_vec(&(&t1 - &t2)) <= gamma * d + 1e-10);

        let (s1, _) = bellman_control(&mdp, &v1).unwrap();
        let (s2, _) = bellman_control(&mdp, &v2).unwrap();
        prop_assert!(inf_norm_vec(&(&s1 - &s2)) <= gamma * d + 1e-10);
    }

    /// The optimality backup equals the backup of its own greedy policy.
    #[test]
    fn greedy_identity(v in value_vec(36)) {
        let (mdp, _) = build_cliffwalk();
        let (tv, greedy) = bellman_control(&mdp, &v).unwrap();
        let recomputed = bellman_pe(&mdp, &greedy, &v).unwrap();
        prop_assert_eq!(tv, recomputed);
    }

    /// Induced kernels stay row-stochastic for arbitrary stochastic policies.
    #[test]
    fn induced_rows_stay_stochastic(rows in prop::collection::vec(prob_row(4), 36)) {
        let (mdp, _) = build_cliffwalk();
        let mut probs = Array2::zeros((36, 4));
        for (x, row) in rows.iter().enumerate() {
            for (a, &p) in row.iter().enumerate() {
                probs[[x, a]] = p;
            }
        }
        let kernel = induce_kernel(&mdp, &Policy::Stochastic(probs)).unwrap();
        for row in kernel.matrix.rows() {
            prop_assert!((row.sum() - 1.0).abs() < PROB_TOL);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    /// The identity-M splitting reproduces value iteration from any start.
    #[test]
    fn identity_splitting_matches_vi(v0 in value_vec(2)) {
        let two = build_two_state();
        let kernel = induce_kernel(&two.mdp, &two.policy).unwrap();
        let scheme = SplittingScheme::value_iteration(&kernel, 0.9);
        let run = splitting_solve(&scheme, &v0, 30, 0.0).unwrap();
        let mut v = v0.clone();
        for iterate in run.iterates.iter() {
            prop_assert!(inf_norm_vec(&(iterate - &v)) <= 1e-12);
            v = bellman_pe(&two.mdp, &two.policy, &v).unwrap();
        }
    }

    /// Both model perturbations interpolate linearly between the truth and
    /// their lambda = 1 limit.
    #[test]
    fn perturbations_are_affine(mdp in random_mdp(5, 2), lambda in 0.0..1.0f64) {
        let smooth_limit = smooth_model(&mdp, 1.0).unwrap();
        let loop_limit = selfloop_model(&mdp, 1.0).unwrap();
        let s = smooth_model(&mdp, lambda).unwrap();
        let l = selfloop_model(&mdp, lambda).unwrap();
        let expect_s =
            mdp.transition() * (1.0 - lambda) + smooth_limit.approx_transition() * lambda;
        let expect_l =
            mdp.transition() * (1.0 - lambda) + loop_limit.approx_transition() * lambda;
        let dev_s = (s.approx_transition() - &expect_s)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let dev_l = (l.approx_transition() - &expect_l)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(dev_s < 1e-12);
        prop_assert!(dev_l < 1e-12);
    }

    /// Smoothing never moves mass outside the original support, and the
    /// smoothed rows remain distributions.
    #[test]
    fn smoothing_preserves_support(mdp in random_mdp(6, 2), lambda in 0.001..1.0f64) {
        let smoothed = smooth_rows(mdp.transition(), lambda).unwrap();
        for ((x, a, y), &p) in smoothed.indexed_iter() {
            let original = mdp.transition()[[x, a, y]];
            prop_assert_eq!(original > 1e-15, p > 1e-15);
        }
    }

    /// Decaying schedules never increase.
    #[test]
    fn schedules_decay(alpha in 0.01..1.0f64, delay in 0u64..100, u in 0.5..1.0f64, t in 1u64..10_000) {
        let dd = Schedule::DelayedDecay { alpha, delay };
        let rl = Schedule::RescaledLinear { alpha, u };
        prop_assert!(dd.rate(t + 1) <= dd.rate(t) + 1e-15);
        prop_assert!(rl.rate(t + 1) <= rl.rate(t) + 1e-15);
    }

    /// CSV emission round-trips every record.
    #[test]
    fn csv_round_trip(
        steps in prop::collection::vec(0u64..1000, 1..40),
        values in prop::collection::vec(-1e9..1e9f64, 40),
        seed in 0u64..1000,
    ) {
        let mut run = RunTrajectory::new("prop", seed);
        for (i, &step) in steps.iter().enumerate() {
            run.push(step, format!("metric{}", i % 3), values[i]);
        }
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&run)).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), 1);
        prop_assert_eq!(&back[0].records, &run.records);
        prop_assert_eq!(back[0].seed, seed);
    }
}
