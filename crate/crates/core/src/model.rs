//! Approximate-model construction: smoothing and self-loop perturbations of a
//! known kernel, plus the maximum-likelihood model estimated from counts.

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{validate_kernel, Policy, TabularMdp, SUPPORT_TOL};

/// A true MDP together with an approximate transition kernel over the same
/// state/action sets. Rewards and discount are shared with the true MDP.
#[derive(Clone, Debug)]
pub struct ModelPair {
    true_mdp: TabularMdp,
    approx: Array3<f64>,
}

impl ModelPair {
    pub fn new(true_mdp: TabularMdp, approx: Array3<f64>) -> Result<Self> {
        if approx.dim() != true_mdp.transition().dim() {
            return Err(Error::dims(format!(
                "approximate kernel is {:?}, true kernel is {:?}",
                approx.dim(),
                true_mdp.transition().dim()
            )));
        }
        validate_kernel(&approx)?;
        Ok(ModelPair { true_mdp, approx })
    }

    /// Pairs an MDP with itself: a zero-error model.
    pub fn exact(true_mdp: TabularMdp) -> Self {
        let approx = true_mdp.transition().clone();
        ModelPair { true_mdp, approx }
    }

    pub fn true_mdp(&self) -> &TabularMdp {
        &self.true_mdp
    }

    pub fn approx_transition(&self) -> &Array3<f64> {
        &self.approx
    }

    /// The MDP `(X, A, r, P_hat, gamma)`: the true rewards over the
    /// approximate dynamics.
    pub fn approx_mdp(&self) -> TabularMdp {
        self.true_mdp
            .with_transition(self.approx.clone())
            .expect("approx kernel was validated at construction")
    }

    /// Policy-induced approximate kernel `P_hat^pi`.
    pub fn approx_kernel(&self, policy: &Policy) -> Result<Array2<f64>> {
        Ok(crate::mdp::induce_kernel(&self.approx_mdp(), policy)?.matrix)
    }

    pub fn discount(&self) -> f64 {
        self.true_mdp.discount()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "smoothing parameter must lie in [0,1], got {lambda}"
        )));
    }
    Ok(())
}

/// Mixes every row of `kernel` with the uniform distribution over that row's
/// own support: `(1-lambda) P + lambda U({x' : P(x'|x,a) > 0})`.
pub fn smooth_rows(kernel: &Array3<f64>, lambda: f64) -> Result<Array3<f64>> {
    check_lambda(lambda)?;
    let (s, a, _) = kernel.dim();
    let mut out = kernel.clone();
    for x in 0..s {
        for act in 0..a {
            let row = kernel.slice(ndarray::s![x, act, ..]);
            let support: Vec<usize> = (0..s).filter(|&y| row[y] > SUPPORT_TOL).collect();
            let u = 1.0 / support.len() as f64;
            let mut out_row = out.slice_mut(ndarray::s![x, act, ..]);
            out_row.mapv_inplace(|p| (1.0 - lambda) * p);
            for &y in &support {
                out_row[y] += lambda * u;
            }
        }
    }
    Ok(out)
}

/// Smoothed perturbation of the true kernel.
pub fn smooth_model(mdp: &TabularMdp, lambda: f64) -> Result<ModelPair> {
    let approx = smooth_rows(mdp.transition(), lambda)?;
    ModelPair::new(mdp.clone(), approx)
}

/// Self-loop perturbation: `(1-lambda) P + lambda I(.|x)`, pushing all
/// transitions toward staying in place.
pub fn selfloop_model(mdp: &TabularMdp, lambda: f64) -> Result<ModelPair> {
    check_lambda(lambda)?;
    let mut approx = mdp.transition().mapv(|p| (1.0 - lambda) * p);
    let (s, a, _) = approx.dim();
    for x in 0..s {
        for act in 0..a {
            approx[[x, act, x]] += lambda;
        }
    }
    ModelPair::new(mdp.clone(), approx)
}

/// Visitation counts `N(x, a, x')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    counts: Array3<u64>,
}

impl CountTable {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        CountTable {
            counts: Array3::zeros((n_states, n_actions, n_states)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.counts.dim().0
    }

    /// Records one observed transition.
    pub fn record(&mut self, state: usize, action: usize, next_state: usize) -> Result<()> {
        let (s, a, _) = self.counts.dim();
        if state >= s || action >= a || next_state >= s {
            return Err(Error::invalid(format!(
                "transition ({state},{action},{next_state}) out of range for ({s},{a})"
            )));
        }
        self.counts[[state, action, next_state]] += 1;
        Ok(())
    }

    pub fn count(&self, state: usize, action: usize, next_state: usize) -> u64 {
        self.counts[[state, action, next_state]]
    }

    pub fn row_total(&self, state: usize, action: usize) -> u64 {
        self.counts
            .slice(ndarray::s![state, action, ..])
            .iter()
            .sum()
    }

    /// Empirical row as a probability distribution; uniform over all states
    /// when the row has never been visited.
    pub fn mle_row(&self, state: usize, action: usize) -> Array1<f64> {
        let n = self.n_states();
        let total = self.row_total(state, action);
        if total == 0 {
            Array1::from_elem(n, 1.0 / n as f64)
        } else {
            let row = self.counts.slice(ndarray::s![state, action, ..]);
            Array1::from_shape_fn(n, |y| row[y] as f64 / total as f64)
        }
    }
}

/// Maximum-likelihood kernel with untouched rows falling back to uniform.
pub fn mle_kernel(counts: &CountTable) -> Array3<f64> {
    let (s, a, _) = counts.counts.dim();
    let mut out = Array3::zeros((s, a, s));
    for x in 0..s {
        for act in 0..a {
            out.slice_mut(ndarray::s![x, act, ..])
                .assign(&counts.mle_row(x, act));
        }
    }
    out
}

/// Pairs the true MDP with the MLE kernel of `counts`.
pub fn mle_model(mdp: &TabularMdp, counts: &CountTable) -> Result<ModelPair> {
    ModelPair::new(mdp.clone(), mle_kernel(counts))
}

/// Smoothed MLE: the smoothing mixes over the MLE row's own support (all
/// states while a row is untouched, since its fallback is uniform).
pub fn smoothed_mle_model(mdp: &TabularMdp, counts: &CountTable, lambda: f64) -> Result<ModelPair> {
    let approx = smooth_rows(&mle_kernel(counts), lambda)?;
    ModelPair::new(mdp.clone(), approx)
}

/// `||P^pi - P_hat^pi||_inf`: the maximum L1 row distance between the
/// induced kernels (twice the maximum total-variation distance). Without a
/// policy, the maximum runs over all raw `(x, a)` rows instead.
pub fn sup_model_error(pair: &ModelPair, policy: Option<&Policy>) -> Result<f64> {
    match policy {
        Some(policy) => {
            let p = crate::mdp::induce_kernel(pair.true_mdp(), policy)?.matrix;
            let ph = pair.approx_kernel(policy)?;
            Ok((&p - &ph)
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max))
        }
        None => {
            let diff = pair.true_mdp().transition() - &pair.approx;
            let (s, a, _) = diff.dim();
            let mut worst = 0.0f64;
            for x in 0..s {
                for act in 0..a {
                    let l1: f64 = diff
                        .slice(ndarray::s![x, act, ..])
                        .iter()
                        .map(|v| v.abs())
                        .sum();
                    worst = worst.max(l1);
                }
            }
            Ok(worst)
        }
    }
}
