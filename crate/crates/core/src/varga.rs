//! Operator-splitting value iteration.
//!
//! Splitting `I - gamma P^pi` into `M^pi = I - gamma P_hat^pi` and
//! `N^pi = gamma (P^pi - P_hat^pi)` yields the iteration
//!
//! ```text
//! V_k <- S^pi V_{k-1},   S^pi V = (I - gamma P_hat^pi)^-1 [r^pi + gamma (P^pi - P_hat^pi) V]
//! ```
//!
//! Each application of `S^pi` solves the auxiliary MDP `(X, A, rbar_V, P_hat,
//! gamma)`, where only the auxiliary reward `rbar_V` touches the true model.
//! The control variant improves the policy against the auxiliary MDP instead
//! of taking a one-step greedy policy.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{self, LuFactor};
use crate::mdp::{Mode, Policy, TabularMdp};
use crate::model::ModelPair;
use crate::solvers::{self, pe_system_matrix, raw};
use crate::splitting::sup_dist;
use crate::trajectory::{RunTrajectory, DIVERGENCE_LIMIT};

/// How the auxiliary MDP is solved inside each outer iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InnerSolve {
    /// Direct linear solve (PE) or policy iteration to stability (Control).
    Exact,
    /// `L` backups of the auxiliary Bellman operator, warm-started at the
    /// current value.
    Iterative(usize),
}

/// Auxiliary reward `rbar_V(x,a) = r(x,a) + gamma * sum_y (P - P_hat)(y|x,a) V(y)`.
///
/// With `P_hat = P` this is exactly `r`; a constant `V` is annihilated as
/// well since both kernels have unit row sums.
pub fn auxiliary_reward(pair: &ModelPair, v: &Array1<f64>) -> Result<Array2<f64>> {
    let mdp = pair.true_mdp();
    if v.len() != mdp.n_states() {
        return Err(Error::dims(format!(
            "value has length {}, MDP has {} states",
            v.len(),
            mdp.n_states()
        )));
    }
    let (s, a, _) = mdp.transition().dim();
    let gamma = mdp.discount();
    let mut out = mdp.reward().clone();
    for x in 0..s {
        for act in 0..a {
            let p = mdp.transition_row(x, act);
            let ph = pair.approx_transition().slice(ndarray::s![x, act, ..]);
            let mut corr = 0.0;
            for y in 0..s {
                corr += (p[y] - ph[y]) * v[y];
            }
            out[[x, act]] += gamma * corr;
        }
    }
    Ok(out)
}

/// The auxiliary MDP `(X, A, rbar_V, P_hat, gamma)` generated by `v`.
#[derive(Clone, Debug)]
pub struct AuxiliaryMdp {
    pub base: TabularMdp,
    pub source_value: Array1<f64>,
}

pub fn auxiliary_mdp(pair: &ModelPair, v: &Array1<f64>) -> Result<AuxiliaryMdp> {
    let rbar = auxiliary_reward(pair, v)?;
    Ok(AuxiliaryMdp {
        base: pair.approx_mdp().with_reward(rbar)?,
        source_value: v.clone(),
    })
}

/// One application of the policy operator: `S^pi v`.
pub fn varga_pe(
    pair: &ModelPair,
    policy: &Policy,
    v: &Array1<f64>,
    inner: InnerSolve,
) -> Result<Array1<f64>> {
    let aux = auxiliary_mdp(pair, v)?.base;
    apply_pe(&aux, policy, v, inner)
}

fn apply_pe(
    aux: &TabularMdp,
    policy: &Policy,
    v: &Array1<f64>,
    inner: InnerSolve,
) -> Result<Array1<f64>> {
    match inner {
        InnerSolve::Exact => solvers::solve_pe_direct(aux, policy),
        InnerSolve::Iterative(l) => {
            if l < 1 {
                return Err(Error::invalid("iterative inner solve needs L >= 1"));
            }
            let mut u = v.clone();
            for _ in 0..l {
                u = crate::mdp::bellman_pe(aux, policy, &u)?;
            }
            Ok(u)
        }
    }
}

/// One application of the optimality operator: `S* v` and the improved
/// policy `pi_V(v)`, the optimal policy of the auxiliary MDP.
pub fn varga_control(
    pair: &ModelPair,
    v: &Array1<f64>,
    inner: InnerSolve,
) -> Result<(Array1<f64>, Policy)> {
    let aux = auxiliary_mdp(pair, v)?.base;
    apply_control(&aux, v, inner, &mut vec![0; v.len()])
}

fn apply_control(
    aux: &TabularMdp,
    v: &Array1<f64>,
    inner: InnerSolve,
    warm_policy: &mut Vec<usize>,
) -> Result<(Array1<f64>, Policy)> {
    match inner {
        InnerSolve::Exact => {
            let value = raw::policy_iteration_warm(
                aux.transition(),
                aux.reward(),
                aux.discount(),
                warm_policy,
                solvers::DEFAULT_MAX_ITERS,
            )?;
            Ok((value, Policy::Deterministic(warm_policy.clone())))
        }
        InnerSolve::Iterative(l) => {
            if l < 1 {
                return Err(Error::invalid("iterative inner solve needs L >= 1"));
            }
            let mut u = v.clone();
            let mut actions = Vec::new();
            for _ in 0..l {
                let (next, acts) =
                    raw::backup_opt(aux.transition(), aux.reward(), aux.discount(), &u);
                u = next;
                actions = acts;
            }
            *warm_policy = actions.clone();
            Ok((u, Policy::Deterministic(actions)))
        }
    }
}

/// A finished OS-VI run with its raw iterate and policy history.
#[derive(Clone, Debug)]
pub struct OsviRun {
    pub trajectory: RunTrajectory,
    /// Value iterates `V_0, ..., V_K`.
    pub iterates: Vec<Array1<f64>>,
    /// Improved policies `pi_1, ..., pi_K` (Control mode only).
    pub policies: Vec<Policy>,
    /// True-MDP values `V^{pi_k}` of each improved policy (Control mode).
    pub policy_values: Vec<Array1<f64>>,
    /// Fixed point of the true MDP the errors are measured against.
    pub reference: Array1<f64>,
    pub diverged: bool,
}

/// Runs OS-VI for `outer_iters` iterations.
///
/// Each outer iteration queries the true model once (one batch of
/// `n_states * n_actions` expectations) to build the auxiliary reward, then
/// solves the auxiliary MDP with the configured inner solver. Divergence is
/// recorded, never raised: the run stops early only when iterates leave the
/// representable range.
pub fn osvi(
    pair: &ModelPair,
    mode: Mode,
    policy: Option<&Policy>,
    v0: &Array1<f64>,
    outer_iters: usize,
    inner: InnerSolve,
) -> Result<OsviRun> {
    let mdp = pair.true_mdp();
    if v0.len() != mdp.n_states() {
        return Err(Error::dims("v0 length does not match the MDP"));
    }
    if let InnerSolve::Iterative(l) = inner {
        if l < 1 {
            return Err(Error::invalid("iterative inner solve needs L >= 1"));
        }
    }
    let batch = (mdp.n_states() * mdp.n_actions()) as f64;

    match mode {
        Mode::Pe => {
            let policy = policy.ok_or_else(|| Error::invalid("PE mode needs a policy"))?;
            let reference = solvers::solve_pe_direct(mdp, policy)?;
            // The approximate kernel is fixed across iterations, so the inner
            // system (I - gamma P_hat^pi) is factored once.
            let ph = pair.approx_kernel(policy)?;
            let aux_system = pe_system_matrix(
                &crate::mdp::InducedKernel {
                    matrix: ph,
                    reward: Array1::zeros(mdp.n_states()),
                },
                mdp.discount(),
            );
            let factor = LuFactor::new(&aux_system)?;

            let mut run = OsviRun {
                trajectory: RunTrajectory::new("osvi-pe", 0),
                iterates: vec![v0.clone()],
                policies: Vec::new(),
                policy_values: Vec::new(),
                reference,
                diverged: false,
            };
            record_value_errors(&mut run, 0, v0, batch);
            let mut v = v0.clone();
            for k in 1..=outer_iters {
                let rbar = auxiliary_reward(pair, &v)?;
                let rbar_pi = induce_reward(&rbar, policy);
                v = match inner {
                    InnerSolve::Exact => factor.solve(&rbar_pi)?,
                    InnerSolve::Iterative(l) => {
                        let aux = pair.approx_mdp().with_reward(rbar)?;
                        apply_pe(&aux, policy, &v, InnerSolve::Iterative(l))?
                    }
                };
                run.iterates.push(v.clone());
                record_value_errors(&mut run, k, &v, batch);
                if !v.iter().all(|x| x.is_finite()) || linalg::inf_norm_vec(&v) > 1e12 {
                    run.diverged = true;
                    break;
                }
            }
            run.diverged |= run.trajectory.diverged;
            run.trajectory.diverged = run.diverged;
            Ok(run)
        }
        Mode::Control => {
            let (reference, _) = solvers::solve_control_exact(mdp)?;
            let mut run = OsviRun {
                trajectory: RunTrajectory::new("osvi-control", 0),
                iterates: vec![v0.clone()],
                policies: Vec::new(),
                policy_values: Vec::new(),
                reference,
                diverged: false,
            };
            record_value_errors(&mut run, 0, v0, batch);
            let mut v = v0.clone();
            let mut warm = vec![0usize; mdp.n_states()];
            for k in 1..=outer_iters {
                let aux = auxiliary_mdp(pair, &v)?.base;
                let (next, pi_k) = apply_control(&aux, &v, inner, &mut warm)?;
                v = next;
                run.iterates.push(v.clone());
                record_value_errors(&mut run, k, &v, batch);
                let v_pi = solvers::solve_pe_direct(mdp, &pi_k)?;
                record_policy_errors(&mut run, k, &v_pi);
                run.policies.push(pi_k);
                run.policy_values.push(v_pi);
                if !v.iter().all(|x| x.is_finite()) || linalg::inf_norm_vec(&v) > 1e12 {
                    run.diverged = true;
                    break;
                }
            }
            run.diverged |= run.trajectory.diverged;
            run.trajectory.diverged = run.diverged;
            Ok(run)
        }
    }
}

fn induce_reward(rbar: &Array2<f64>, policy: &Policy) -> Array1<f64> {
    let n = rbar.nrows();
    match policy {
        Policy::Deterministic(actions) => Array1::from_shape_fn(n, |x| rbar[[x, actions[x]]]),
        Policy::Stochastic(probs) => Array1::from_shape_fn(n, |x| {
            (0..rbar.ncols()).map(|a| probs[[x, a]] * rbar[[x, a]]).sum()
        }),
    }
}

fn record_value_errors(run: &mut OsviRun, step: usize, v: &Array1<f64>, batch: f64) {
    let err = sup_dist(v, &run.reference);
    run.trajectory.push(step as u64, "sup_error", err);
    let ref_l1: f64 = run.reference.iter().map(|x| x.abs()).sum();
    if ref_l1 > 0.0 {
        let diff: f64 = v
            .iter()
            .zip(run.reference.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        run.trajectory
            .push(step as u64, "normalized_error", diff / ref_l1);
    }
    run.trajectory
        .push(step as u64, "queries", step as f64 * batch);
    if !err.is_finite() || err > DIVERGENCE_LIMIT {
        run.trajectory.diverged = true;
    }
}

fn record_policy_errors(run: &mut OsviRun, step: usize, v_pi: &Array1<f64>) {
    let err = sup_dist(v_pi, &run.reference);
    run.trajectory.push(step as u64, "policy_sup_error", err);
    let ref_l1: f64 = run.reference.iter().map(|x| x.abs()).sum();
    if ref_l1 > 0.0 {
        let diff: f64 = v_pi
            .iter()
            .zip(run.reference.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        run.trajectory
            .push(step as u64, "policy_normalized_error", diff / ref_l1);
    }
}
