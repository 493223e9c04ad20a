//! Exact and iterative planners: direct policy evaluation, value iteration,
//! policy iteration, and modified policy iteration.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{
    bellman_control, bellman_pe, greedy_policy, induce_kernel, InducedKernel, Mode, Policy,
    TabularMdp,
};
use crate::splitting::{splitting_solve, sup_dist, SplittingScheme};
use crate::trajectory::RunTrajectory;

/// Default iteration cap for fixed-point solves.
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Default consecutive-iterate tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Builds the policy-evaluation system matrix `I - gamma P^pi`.
pub fn pe_system_matrix(kernel: &InducedKernel, discount: f64) -> Array2<f64> {
    let n = kernel.reward.len();
    let mut a = kernel.matrix.mapv(|p| -discount * p);
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    a
}

/// Solves `(I - gamma P^pi) V = r^pi` directly.
pub fn solve_pe_direct(mdp: &TabularMdp, policy: &Policy) -> Result<Array1<f64>> {
    let kernel = induce_kernel(mdp, policy)?;
    let a = pe_system_matrix(&kernel, mdp.discount());
    linalg::solve(&a, &kernel.reward)
}

/// Exact control solution `(V*, pi*)` via policy iteration run to greedy
/// stability, starting from the all-zeros policy. Ties break toward the
/// lowest action index, making the returned policy canonical.
pub fn solve_control_exact(mdp: &TabularMdp) -> Result<(Array1<f64>, Policy)> {
    let mut pi = vec![0usize; mdp.n_states()];
    let v = raw::policy_iteration_warm(
        mdp.transition(),
        mdp.reward(),
        mdp.discount(),
        &mut pi,
        DEFAULT_MAX_ITERS,
    )?;
    Ok((v, Policy::Deterministic(pi)))
}

/// Result of a planner run: metric records plus the raw iterate sequence.
#[derive(Clone, Debug)]
pub struct PlanRun {
    pub trajectory: RunTrajectory,
    /// Value iterates `V_0, ..., V_K`.
    pub iterates: Vec<Array1<f64>>,
    /// Policies `pi_1, ..., pi_K` for control-style runs (empty for PE).
    pub policies: Vec<Policy>,
    /// Fixed point the errors are measured against (`V^pi` or `V*`).
    pub reference: Array1<f64>,
    pub converged_at: Option<usize>,
    pub final_delta: f64,
}

fn l1_norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn record_errors(
    trajectory: &mut RunTrajectory,
    step: u64,
    prefix: &str,
    v: &Array1<f64>,
    reference: &Array1<f64>,
) {
    trajectory.push(step, format!("{prefix}sup_error"), sup_dist(v, reference));
    let ref_l1 = l1_norm(reference);
    if ref_l1 > 0.0 {
        let diff: f64 = v
            .iter()
            .zip(reference.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        trajectory.push(step, format!("{prefix}normalized_error"), diff / ref_l1);
    }
}

fn query_batch(mdp: &TabularMdp) -> f64 {
    (mdp.n_states() * mdp.n_actions()) as f64
}

/// Value iteration `V_k <- T^pi V_{k-1}` (PE) or `V_k <- T* V_{k-1}` (Control).
///
/// PE mode runs through [`splitting_solve`] with the `M = I`,
/// `N = gamma P^pi` scheme, which is the same iteration. Stops early when
/// consecutive iterates come within `tol` in the sup norm; errors are
/// measured against the direct solution (PE) or the exact optimum (Control).
pub fn value_iteration(
    mdp: &TabularMdp,
    mode: Mode,
    policy: Option<&Policy>,
    v0: &Array1<f64>,
    iters: usize,
    tol: f64,
) -> Result<PlanRun> {
    if v0.len() != mdp.n_states() {
        return Err(Error::dims("v0 length does not match the MDP"));
    }
    match mode {
        Mode::Pe => {
            let policy = policy.ok_or_else(|| Error::invalid("PE mode needs a policy"))?;
            let kernel = induce_kernel(mdp, policy)?;
            let scheme = SplittingScheme::value_iteration(&kernel, mdp.discount());
            let split = splitting_solve(&scheme, v0, iters, tol)?;
            let mut trajectory = RunTrajectory::new("vi-pe", 0);
            trajectory.diverged = split.trajectory.diverged;
            for (k, v) in split.iterates.iter().enumerate() {
                record_errors(&mut trajectory, k as u64, "", v, &split.solution);
                trajectory.push(k as u64, "queries", k as f64 * query_batch(mdp));
            }
            for &(step, delta) in split.trajectory.series("delta").iter() {
                trajectory.push(step, "delta", delta);
            }
            Ok(PlanRun {
                trajectory,
                iterates: split.iterates,
                policies: Vec::new(),
                reference: split.solution,
                converged_at: split.converged_at,
                final_delta: split.final_delta,
            })
        }
        Mode::Control => {
            let (reference, _) = solve_control_exact(mdp)?;
            let mut trajectory = RunTrajectory::new("vi-control", 0);
            let mut iterates = vec![v0.clone()];
            let mut policies = Vec::new();
            let mut v = v0.clone();
            record_errors(&mut trajectory, 0, "", &v, &reference);
            trajectory.push(0, "queries", 0.0);
            let mut converged_at = None;
            let mut final_delta = f64::INFINITY;
            for k in 1..=iters {
                let (next, pi) = bellman_control(mdp, &v)?;
                final_delta = sup_dist(&next, &v);
                v = next;
                iterates.push(v.clone());
                policies.push(pi);
                record_errors(&mut trajectory, k as u64, "", &v, &reference);
                trajectory.push(k as u64, "queries", k as f64 * query_batch(mdp));
                trajectory.push(k as u64, "delta", final_delta);
                if final_delta < tol {
                    converged_at = Some(k);
                    break;
                }
            }
            Ok(PlanRun {
                trajectory,
                iterates,
                policies,
                reference,
                converged_at,
                final_delta,
            })
        }
    }
}

/// Policy iteration: `pi_k <- greedy(V_{k-1})`, `V_k <- solve_pe_direct(pi_k)`.
///
/// Stops when the greedy policy stops changing. Records
/// `||V* - V^{pi_k}||_inf` per iteration.
pub fn policy_iteration(mdp: &TabularMdp, pi0: &Policy, iters: usize) -> Result<PlanRun> {
    pi0.validate(mdp)?;
    let (reference, _) = solve_control_exact(mdp)?;
    let mut trajectory = RunTrajectory::new("pi", 0);
    let mut pi = pi0.clone();
    let mut v = solve_pe_direct(mdp, &pi)?;
    let mut iterates = vec![v.clone()];
    let mut policies = Vec::new();
    record_errors(&mut trajectory, 0, "policy_", &v, &reference);
    trajectory.push(0, "queries", 0.0);
    let mut converged_at = None;
    let mut final_delta = f64::INFINITY;
    for k in 1..=iters {
        let next_pi = greedy_policy(mdp, &v)?;
        if next_pi == pi {
            converged_at = Some(k - 1);
            break;
        }
        pi = next_pi;
        let next_v = solve_pe_direct(mdp, &pi)?;
        final_delta = sup_dist(&next_v, &v);
        v = next_v;
        iterates.push(v.clone());
        policies.push(pi.clone());
        record_errors(&mut trajectory, k as u64, "policy_", &v, &reference);
        trajectory.push(k as u64, "queries", k as f64 * query_batch(mdp));
    }
    Ok(PlanRun {
        trajectory,
        iterates,
        policies,
        reference,
        converged_at,
        final_delta,
    })
}

/// Modified policy iteration: greedy improvement followed by `m` backups of
/// the improved policy per iteration.
///
/// The run starts from `V_0 = V^{pi_0}`. With `m = 1` the value sequence
/// coincides with value iteration (Control) started at `V^{pi_0}`; as
/// `m -> inf` it matches policy iteration.
pub fn modified_policy_iteration(
    mdp: &TabularMdp,
    pi0: &Policy,
    m: usize,
    iters: usize,
) -> Result<PlanRun> {
    if m < 1 {
        return Err(Error::invalid("modified policy iteration needs m >= 1"));
    }
    pi0.validate(mdp)?;
    let (reference, _) = solve_control_exact(mdp)?;
    let mut trajectory = RunTrajectory::new("mpi", 0);
    let mut v = solve_pe_direct(mdp, pi0)?;
    let mut iterates = vec![v.clone()];
    let mut policies = Vec::new();
    record_errors(&mut trajectory, 0, "", &v, &reference);
    trajectory.push(0, "queries", 0.0);
    let mut final_delta = f64::INFINITY;
    for k in 1..=iters {
        let (mut next, pi_k) = bellman_control(mdp, &v)?;
        for _ in 1..m {
            next = bellman_pe(mdp, &pi_k, &next)?;
        }
        final_delta = sup_dist(&next, &v);
        v = next;
        iterates.push(v.clone());
        record_errors(&mut trajectory, k as u64, "", &v, &reference);
        let v_pi = solve_pe_direct(mdp, &pi_k)?;
        record_errors(&mut trajectory, k as u64, "policy_", &v_pi, &reference);
        trajectory.push(k as u64, "queries", k as f64 * query_batch(mdp));
        policies.push(pi_k);
    }
    Ok(PlanRun {
        trajectory,
        iterates,
        policies,
        reference,
        converged_at: None,
        final_delta,
    })
}

/// Allocation-light planning kernels over borrowed tables, shared by the
/// sample-based learners whose inner loops solve an MDP every step.
pub(crate) mod raw {
    use super::*;

    #[inline]
    pub fn q_value(
        p: &Array3<f64>,
        r: &Array2<f64>,
        gamma: f64,
        x: usize,
        a: usize,
        v: &Array1<f64>,
    ) -> f64 {
        let row = p.slice(ndarray::s![x, a, ..]);
        let mut acc = 0.0;
        for (y, &prob) in row.iter().enumerate() {
            acc += prob * v[y];
        }
        r[[x, a]] + gamma * acc
    }

    /// One optimality backup; returns the backed-up values and greedy actions.
    pub fn backup_opt(
        p: &Array3<f64>,
        r: &Array2<f64>,
        gamma: f64,
        v: &Array1<f64>,
    ) -> (Array1<f64>, Vec<usize>) {
        let (n, na, _) = p.dim();
        let mut out = Array1::zeros(n);
        let mut actions = vec![0usize; n];
        for x in 0..n {
            let mut best = q_value(p, r, gamma, x, 0, v);
            let mut best_a = 0;
            for a in 1..na {
                let q = q_value(p, r, gamma, x, a, v);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            out[x] = best;
            actions[x] = best_a;
        }
        (out, actions)
    }

    /// One fixed-policy backup for a deterministic policy.
    pub fn backup_det(
        p: &Array3<f64>,
        r: &Array2<f64>,
        gamma: f64,
        pi: &[usize],
        v: &Array1<f64>,
    ) -> Array1<f64> {
        let n = p.dim().0;
        let mut out = Array1::zeros(n);
        for x in 0..n {
            out[x] = q_value(p, r, gamma, x, pi[x], v);
        }
        out
    }

    /// Direct policy evaluation of a deterministic policy.
    pub fn solve_pe_det(
        p: &Array3<f64>,
        r: &Array2<f64>,
        gamma: f64,
        pi: &[usize],
    ) -> Result<Array1<f64>> {
        let n = p.dim().0;
        let mut a = Array2::zeros((n, n));
        let mut b = Array1::zeros(n);
        for x in 0..n {
            let row = p.slice(ndarray::s![x, pi[x], ..]);
            for y in 0..n {
                a[[x, y]] = -gamma * row[y];
            }
            a[[x, x]] += 1.0;
            b[x] = r[[x, pi[x]]];
        }
        linalg::solve(&a, &b)
    }

    /// Policy iteration to greedy stability, warm-started at `pi`.
    ///
    /// Also stops when the value stops moving at floating-point scale:
    /// exact ties between equal-valued policies can make the greedy argmax
    /// flip forever on rounding noise, and a stagnant value means the
    /// iteration is already optimal to machine precision.
    pub fn policy_iteration_warm(
        p: &Array3<f64>,
        r: &Array2<f64>,
        gamma: f64,
        pi: &mut Vec<usize>,
        max_iters: usize,
    ) -> Result<Array1<f64>> {
        let mut v = solve_pe_det(p, r, gamma, pi)?;
        for _ in 0..max_iters {
            let (_, next) = backup_opt(p, r, gamma, &v);
            if next == *pi {
                return Ok(v);
            }
            *pi = next;
            let v_next = solve_pe_det(p, r, gamma, pi)?;
            let change = crate::splitting::sup_dist(&v_next, &v);
            let scale = 1.0 + linalg::inf_norm_vec(&v_next);
            v = v_next;
            if change <= 1e-13 * scale {
                return Ok(v);
            }
        }
        Err(Error::Solver(
            "policy iteration failed to stabilize within the iteration cap".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_state() -> (TabularMdp, Policy) {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 0]] = 0.9;
        t[[0, 0, 1]] = 0.1;
        t[[1, 0, 0]] = 0.1;
        t[[1, 0, 1]] = 0.9;
        let mdp = TabularMdp::new(t, array![[1.0], [-0.5]], 0.9).unwrap();
        (mdp, Policy::Deterministic(vec![0, 0]))
    }

    /// Independent 2x2 oracle by Cramer's rule: det(I - 0.9 P) = 0.028.
    fn two_state_value_oracle() -> (f64, f64) {
        let a11 = 1.0 - 0.9 * 0.9;
        let a12 = -0.9 * 0.1;
        let a21 = -0.9 * 0.1;
        let a22 = 1.0 - 0.9 * 0.9;
        let (b1, b2) = (1.0, -0.5);
        let det = a11 * a22 - a12 * a21;
        ((b1 * a22 - a12 * b2) / det, (a11 * b2 - b1 * a21) / det)
    }

    #[test]
    fn direct_pe_matches_cramer_oracle() {
        let (mdp, pol) = two_state();
        let v = solve_pe_direct(&mdp, &pol).unwrap();
        let (v0, v1) = two_state_value_oracle();
        assert!((v0 - 5.178_571_428_571_428).abs() < 1e-12);
        assert!((v[0] - v0).abs() < 1e-12, "got {}", v[0]);
        assert!((v[1] - v1).abs() < 1e-12);
        assert!((v1 - (-0.178_571_428_571_428_5)).abs() < 1e-12);
    }

    #[test]
    fn direct_pe_zero_reward_gives_zero_value() {
        let (mdp, pol) = two_state();
        let zeroed = mdp.with_reward(Array2::zeros((2, 1))).unwrap();
        let v = solve_pe_direct(&zeroed, &pol).unwrap();
        assert!(linalg::inf_norm_vec(&v) < 1e-12);
    }

    #[test]
    fn direct_pe_discount_zero_returns_reward() {
        let (mdp, pol) = two_state();
        let myopic =
            TabularMdp::new(mdp.transition().clone(), mdp.reward().clone(), 0.0).unwrap();
        let v = solve_pe_direct(&myopic, &pol).unwrap();
        assert_eq!(v, array![1.0, -0.5]);
    }

    #[test]
    fn vi_pe_error_follows_power_recursion() {
        // e_k = (gamma P^pi)^k e_0 exactly for the M = I splitting.
        let (mdp, pol) = two_state();
        let v0 = Array1::zeros(2);
        let run = value_iteration(&mdp, Mode::Pe, Some(&pol), &v0, 40, 0.0).unwrap();
        let kernel = induce_kernel(&mdp, &pol).unwrap();
        let g = kernel.matrix.mapv(|p| 0.9 * p);
        let mut e = &v0 - &run.reference;
        for k in 0..=40 {
            let expected = linalg::inf_norm_vec(&e);
            let got = run.trajectory.series("sup_error")[k].1;
            assert!(
                (got - expected).abs() < 1e-10,
                "k={k}: {got} vs {expected}"
            );
            e = g.dot(&e);
        }
    }

    #[test]
    fn vi_pe_from_fixed_point_stays_put() {
        let (mdp, pol) = two_state();
        let v_pi = solve_pe_direct(&mdp, &pol).unwrap();
        let run = value_iteration(&mdp, Mode::Pe, Some(&pol), &v_pi, 10, 0.0).unwrap();
        for (_, err) in run.trajectory.series("sup_error") {
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn vi_control_contraction_bound() {
        let (mdp, _) = two_state();
        let v0 = Array1::zeros(2);
        let run = value_iteration(&mdp, Mode::Control, None, &v0, 60, 0.0).unwrap();
        let initial = sup_dist(&v0, &run.reference);
        for (k, err) in run.trajectory.series("sup_error") {
            let bound = 0.9f64.powi(k as i32) * initial + 1e-10;
            assert!(err <= bound, "k={k}: {err} > {bound}");
        }
    }

    #[test]
    fn pi_starting_at_optimum_converges_at_zero() {
        let (mdp, _) = two_state();
        let (_, pi_star) = solve_control_exact(&mdp).unwrap();
        let run = policy_iteration(&mdp, &pi_star, 10).unwrap();
        assert_eq!(run.converged_at, Some(0));
        assert!(run.trajectory.series("policy_sup_error")[0].1 < 1e-10);
    }

    #[test]
    fn mpi_with_m_one_matches_vi_control_exactly() {
        let (mdp, pol) = two_state();
        let v0 = solve_pe_direct(&mdp, &pol).unwrap();
        let mpi = modified_policy_iteration(&mdp, &pol, 1, 15).unwrap();
        let vi = value_iteration(&mdp, Mode::Control, None, &v0, 15, 0.0).unwrap();
        for (a, b) in mpi.iterates.iter().zip(vi.iterates.iter()) {
            assert!(sup_dist(a, b) <= 1e-12);
        }
    }

    #[test]
    fn mpi_rejects_zero_m() {
        let (mdp, pol) = two_state();
        assert!(modified_policy_iteration(&mdp, &pol, 0, 5).is_err());
    }

    #[test]
    fn mpi_fixed_point_is_stationary() {
        let (mdp, _) = two_state();
        let (v_star, pi_star) = solve_control_exact(&mdp).unwrap();
        let run = modified_policy_iteration(&mdp, &pi_star, 3, 5).unwrap();
        for it in &run.iterates {
            assert!(sup_dist(it, &v_star) < 1e-9);
        }
    }
}
