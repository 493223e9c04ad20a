//! Convergence analytics for operator-splitting runs: the gain operator
//! `G^pi`, effective discount factors in the sup and weighted-L4 norms, and
//! checkers for the corresponding error-propagation bounds.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::{induce_kernel, Mode, Policy, SUPPORT_TOL};
use crate::model::{sup_model_error, ModelPair};
use crate::varga::OsviRun;

/// Effective discount factors and the exact gain norm for one policy.
///
/// `gamma_prime_sup = gamma/(1-gamma) * ||P^pi - P_hat^pi||_inf` bounds the
/// exact `||G^pi||_inf` from above; the iteration is guaranteed convergent
/// when it is below one and beats plain value iteration when below `gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDiscountReport {
    pub gamma_prime_sup: f64,
    /// Weighted-L4 effective discount; `None` when no weighting distribution
    /// was supplied, `inf` when the weighting fails a support condition.
    pub gamma_prime_l4: Option<f64>,
    /// Exact `||G^pi||_inf`.
    pub g_norm_sup: f64,
    pub convergent_sup: bool,
    pub faster_than_vi: bool,
}

/// Dense gain operator `G^pi = (I - gamma P_hat^pi)^-1 gamma (P^pi - P_hat^pi)`.
pub fn gain_operator(pair: &ModelPair, policy: &Policy) -> Result<Array2<f64>> {
    let mdp = pair.true_mdp();
    let gamma = mdp.discount();
    let p = induce_kernel(mdp, policy)?.matrix;
    let ph = pair.approx_kernel(policy)?;
    let n = p.nrows();
    let mut m = ph.mapv(|v| -gamma * v);
    for i in 0..n {
        m[[i, i]] += 1.0;
    }
    let m_inv = linalg::inverse(&m)?;
    let diff = (&p - &ph).mapv(|v| gamma * v);
    Ok(m_inv.dot(&diff))
}

/// Exact `||G^pi||_inf` (maximum absolute row sum of the dense gain).
pub fn gain_operator_norm(pair: &ModelPair, policy: &Policy) -> Result<f64> {
    Ok(linalg::inf_norm(&gain_operator(pair, policy)?))
}

fn validate_rho(rho: &Array1<f64>, n: usize) -> Result<()> {
    if rho.len() != n {
        return Err(Error::dims(format!(
            "weighting distribution has length {}, expected {n}",
            rho.len()
        )));
    }
    let sum: f64 = rho.iter().sum();
    if rho.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > crate::mdp::PROB_TOL {
        return Err(Error::invalid(format!(
            "weighting distribution sums to {sum} or has negative entries"
        )));
    }
    Ok(())
}

/// Weighted chi-square divergence
/// `sum_x rho(x) sum_y (P_hat^pi - P^pi)^2(y|x) / P_hat^pi(y|x)`.
///
/// A row entry with `P_hat = 0` but `P != 0` makes the divergence infinite;
/// entries where both vanish contribute nothing.
pub fn chi2_weighted(pair: &ModelPair, policy: &Policy, rho: &Array1<f64>) -> Result<f64> {
    let mdp = pair.true_mdp();
    validate_rho(rho, mdp.n_states())?;
    let p = induce_kernel(mdp, policy)?.matrix;
    let ph = pair.approx_kernel(policy)?;
    let n = p.nrows();
    let mut total = 0.0;
    for x in 0..n {
        let mut row = 0.0;
        for y in 0..n {
            let diff = ph[[x, y]] - p[[x, y]];
            if ph[[x, y]] <= SUPPORT_TOL {
                if diff.abs() > SUPPORT_TOL {
                    return Ok(f64::INFINITY);
                }
            } else {
                row += diff * diff / ph[[x, y]];
            }
        }
        total += rho[x] * row;
    }
    Ok(total)
}

/// Rows of the discounted future-state distribution under the approximate
/// kernel: `eta_hat^pi(.|x) = (1-gamma) * row_x of (I - gamma P_hat^pi)^-1`.
pub fn discounted_future_state(pair: &ModelPair, policy: &Policy) -> Result<Array2<f64>> {
    let gamma = pair.discount();
    let ph = pair.approx_kernel(policy)?;
    let n = ph.nrows();
    let mut m = ph.mapv(|v| -gamma * v);
    for i in 0..n {
        m[[i, i]] += 1.0;
    }
    let inv = linalg::inverse(&m)?;
    // Tiny negative entries are LU rounding; the exact inverse is nonnegative.
    Ok(inv.mapv(|v| ((1.0 - gamma) * v).max(0.0)))
}

/// Concentrability coefficient
/// `C_hat^pi(rho) = sqrt( (1/gamma^2) sum_x rho(x) (max_y eta_hat(y|x)/rho(y))^3 )`.
///
/// Infinite when some reachable state has zero weight under `rho`.
pub fn concentrability(pair: &ModelPair, policy: &Policy, rho: &Array1<f64>) -> Result<f64> {
    let mdp = pair.true_mdp();
    validate_rho(rho, mdp.n_states())?;
    let eta = discounted_future_state(pair, policy)?;
    let gamma = pair.discount();
    let n = eta.nrows();
    let mut acc = 0.0;
    for x in 0..n {
        let mut max_ratio = 0.0f64;
        for y in 0..n {
            let e = eta[[x, y]];
            if e <= SUPPORT_TOL {
                continue;
            }
            if rho[y] <= 0.0 {
                return Ok(f64::INFINITY);
            }
            max_ratio = max_ratio.max(e / rho[y]);
        }
        acc += rho[x] * max_ratio.powi(3);
    }
    Ok((acc / (gamma * gamma)).sqrt())
}

/// Computes the effective discount factors for one policy.
///
/// The L4 branch is only filled when `rho` is supplied; Control mode carries
/// the extra `sqrt(2)` factor inside the square root. States with zero
/// weight make the L4 entry infinite rather than an error.
pub fn effective_discount(
    pair: &ModelPair,
    policy: &Policy,
    rho: Option<&Array1<f64>>,
    mode: Mode,
) -> Result<EffectiveDiscountReport> {
    let gamma = pair.discount();
    let lead = gamma / (1.0 - gamma);
    let sup_err = sup_model_error(pair, Some(policy))?;
    let gamma_prime_sup = lead * sup_err;
    let g_norm_sup = gain_operator_norm(pair, policy)?;

    let gamma_prime_l4 = match rho {
        None => None,
        Some(rho) => {
            validate_rho(rho, pair.true_mdp().n_states())?;
            if rho.iter().any(|&p| p <= 0.0) {
                Some(f64::INFINITY)
            } else {
                let chi2 = chi2_weighted(pair, policy, rho)?;
                let conc = concentrability(pair, policy, rho)?;
                let inner = match mode {
                    Mode::Pe => conc * chi2,
                    Mode::Control => std::f64::consts::SQRT_2 * conc * chi2,
                };
                Some(lead * inner.sqrt())
            }
        }
    };

    Ok(EffectiveDiscountReport {
        gamma_prime_sup,
        gamma_prime_l4,
        g_norm_sup,
        convergent_sup: gamma_prime_sup < 1.0,
        faster_than_vi: gamma_prime_sup < gamma,
    })
}

/// `max_x sqrt(2 KL(P^pi(.|x) || P_hat^pi(.|x)))`: a Pinsker-style upper
/// bound on the sup model error, infinite under support violations.
pub fn kl_model_bound(pair: &ModelPair, policy: &Policy) -> Result<f64> {
    let mdp = pair.true_mdp();
    let p = induce_kernel(mdp, policy)?.matrix;
    let ph = pair.approx_kernel(policy)?;
    let n = p.nrows();
    let mut worst = 0.0f64;
    for x in 0..n {
        let mut kl = 0.0;
        for y in 0..n {
            let pv = p[[x, y]];
            if pv <= SUPPORT_TOL {
                continue;
            }
            let qv = ph[[x, y]];
            if qv <= SUPPORT_TOL {
                return Ok(f64::INFINITY);
            }
            kl += pv * (pv / qv).ln();
        }
        worst = worst.max((2.0 * kl).sqrt());
    }
    Ok(worst)
}

/// Which norm a bound check runs in.
#[derive(Clone, Debug)]
pub enum BoundNorm {
    Sup,
    /// `||f||_{4,rho} = (sum_x rho(x) f(x)^4)^(1/4)`.
    L4(Array1<f64>),
}

impl BoundNorm {
    fn eval(&self, v: &Array1<f64>) -> f64 {
        match self {
            BoundNorm::Sup => linalg::inf_norm_vec(v),
            BoundNorm::L4(rho) => v
                .iter()
                .zip(rho.iter())
                .map(|(x, w)| w * x.powi(4))
                .sum::<f64>()
                .powf(0.25),
        }
    }
}

/// Outcome of checking an error-propagation bound over a finished run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    /// Set when `gamma_prime >= 1`, where the bound carries no information.
    pub vacuous: bool,
    /// Per-iteration slack `rhs_k - lhs_k` (nonnegative when the bound holds).
    pub margins: Vec<f64>,
}

/// Slack tolerance: a margin above `-BOUND_SLACK_TOL * scale` still counts
/// as holding, absorbing direct-solver rounding in the exact-inner runs.
pub const BOUND_SLACK_TOL: f64 = 1e-9;

/// Checks the error-propagation bound of a finished OS-VI run.
///
/// PE: `||V^pi - V_k|| <= gamma'^k ||V^pi - V_0|| + (1-gamma'^k)/(1-gamma') eps_value`.
/// Control: `||V^{pi_k} - V*|| <= 2 gamma'^k/(1-gamma') ||V_0 - V*||
///           + 2 gamma' (1-gamma'^{k-1})/(1-gamma')^2 eps_value
///           + eps_policy/(1-gamma')`, checked for `k >= 1`.
///
/// When `gamma_prime >= 1` the result is vacuously true and flagged.
pub fn check_theorem_bounds(
    run: &OsviRun,
    mode: Mode,
    gamma_prime: f64,
    eps_value: f64,
    eps_policy: f64,
    norm: &BoundNorm,
) -> BoundCheck {
    if gamma_prime >= 1.0 {
        return BoundCheck {
            holds: true,
            vacuous: true,
            margins: Vec::new(),
        };
    }
    let initial = norm.eval(&(&run.iterates[0] - &run.reference));
    let scale = initial.max(1.0);
    let mut margins = Vec::new();
    let mut holds = true;
    match mode {
        Mode::Pe => {
            for (k, v) in run.iterates.iter().enumerate() {
                let lhs = norm.eval(&(v - &run.reference));
                let gp = gamma_prime.powi(k as i32);
                let rhs = gp * initial + (1.0 - gp) / (1.0 - gamma_prime) * eps_value;
                let margin = rhs - lhs;
                holds &= margin >= -BOUND_SLACK_TOL * scale;
                margins.push(margin);
            }
        }
        Mode::Control => {
            for (idx, v_pi) in run.policy_values.iter().enumerate() {
                let k = (idx + 1) as i32;
                let lhs = norm.eval(&(v_pi - &run.reference));
                let gp = gamma_prime.powi(k);
                let rhs = 2.0 * gp / (1.0 - gamma_prime) * initial
                    + 2.0 * gamma_prime * (1.0 - gamma_prime.powi(k - 1))
                        / (1.0 - gamma_prime).powi(2)
                        * eps_value
                    + eps_policy / (1.0 - gamma_prime);
                let margin = rhs - lhs;
                holds &= margin >= -BOUND_SLACK_TOL * scale;
                margins.push(margin);
            }
        }
    }
    BoundCheck {
        holds,
        vacuous: false,
        margins,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::build_two_state;
    use crate::mdp::TabularMdp;
    use crate::varga::{osvi, InnerSolve};
    use ndarray::{array, Array3};

    #[test]
    fn gain_vanishes_for_exact_model() {
        let two = build_two_state();
        let exact = ModelPair::exact(two.mdp.clone());
        assert!(gain_operator_norm(&exact, &two.policy).unwrap() < 1e-14);
    }

    #[test]
    fn gain_norm_accurate_pair() {
        // Independent arithmetic: (I - 0.9 P_hat)^-1 has det 0.028 and row
        // sums 1/(1-gamma); columns of gamma (P - P_hat) are +-0.045, so every
        // entry of G is +-0.45 and the row sums are exactly 0.9.
        let two = build_two_state();
        let g = gain_operator(&two.accurate, &two.policy).unwrap();
        for x in 0..2 {
            assert!((g[[x, 0]] - 0.45).abs() < 1e-12);
            assert!((g[[x, 1]] + 0.45).abs() < 1e-12);
        }
        let norm = gain_operator_norm(&two.accurate, &two.policy).unwrap();
        assert!((norm - 0.9).abs() < 1e-12);
        assert!(norm <= 0.9 + 1e-12);
    }

    #[test]
    fn gain_norm_inaccurate_pair_below_bound() {
        let two = build_two_state();
        let norm = gain_operator_norm(&two.inaccurate, &two.policy).unwrap();
        assert!(norm <= 5.4 + 1e-10);
        // Exact row-sum arithmetic: top row of (I-0.9P_hat)^-1 is
        // (0.37, 0.36)/0.073 and gamma (P - P_hat) has columns
        // (0.27, -0.18) and (-0.27, 0.18), so the top row of G is
        // +-(0.37*0.27 - 0.36*0.18)/0.073 and dominates the row sums.
        let expected = (0.37 * 0.27 - 0.36 * 0.18) / 0.073 * 2.0;
        assert!((norm - expected).abs() < 1e-10, "{norm} vs {expected}");
    }

    #[test]
    fn effective_discount_two_state_values() {
        let two = build_two_state();
        let rep = effective_discount(&two.accurate, &two.policy, None, Mode::Pe).unwrap();
        assert!((rep.gamma_prime_sup - 0.9).abs() < 1e-12);
        assert!(rep.convergent_sup);
        assert!(!rep.faster_than_vi); // 0.9 == gamma, not strictly faster
        assert!(rep.g_norm_sup <= rep.gamma_prime_sup + 1e-10);

        let rep = effective_discount(&two.inaccurate, &two.policy, None, Mode::Pe).unwrap();
        assert!((rep.gamma_prime_sup - 5.4).abs() < 1e-12);
        assert!(!rep.convergent_sup);
    }

    #[test]
    fn effective_discount_zero_for_exact_model() {
        let two = build_two_state();
        let exact = ModelPair::exact(two.mdp.clone());
        let rho = array![0.5, 0.5];
        let rep = effective_discount(&exact, &two.policy, Some(&rho), Mode::Pe).unwrap();
        assert!(rep.gamma_prime_sup < 1e-14);
        assert!(rep.gamma_prime_l4.unwrap() < 1e-7);
        assert!(rep.g_norm_sup < 1e-13);
    }

    #[test]
    fn chi2_matches_scalar_oracle() {
        // Hand-evaluated: row one 0.0025/0.85 + 0.0025/0.15, row two
        // 0.0025/0.05 + 0.0025/0.95, each weighted one half.
        let two = build_two_state();
        let rho = array![0.5, 0.5];
        let chi2 = chi2_weighted(&two.accurate, &two.policy, &rho).unwrap();
        let oracle = 0.5 * (0.0025 / 0.85 + 0.0025 / 0.15) + 0.5 * (0.0025 / 0.05 + 0.0025 / 0.95);
        assert!((chi2 - oracle).abs() < 1e-15, "{chi2} vs {oracle}");
    }

    #[test]
    fn chi2_point_mass_selects_single_row() {
        let two = build_two_state();
        let chi2 = chi2_weighted(&two.accurate, &two.policy, &array![1.0, 0.0]).unwrap();
        let oracle = 0.0025 / 0.85 + 0.0025 / 0.15;
        assert!((chi2 - oracle).abs() < 1e-15);
    }

    #[test]
    fn chi2_identical_kernels_zero() {
        let two = build_two_state();
        let exact = ModelPair::exact(two.mdp.clone());
        assert_eq!(
            chi2_weighted(&exact, &two.policy, &array![0.5, 0.5]).unwrap(),
            0.0
        );
    }

    #[test]
    fn chi2_zero_approx_support_is_infinite() {
        let two = build_two_state();
        let mut ph = Array3::zeros((2, 1, 2));
        ph[[0, 0, 0]] = 1.0;
        ph[[1, 0, 1]] = 1.0;
        let pair = ModelPair::new(two.mdp.clone(), ph).unwrap();
        assert!(chi2_weighted(&pair, &two.policy, &array![0.5, 0.5])
            .unwrap()
            .is_infinite());
    }

    #[test]
    fn eta_rows_are_distributions() {
        let two = build_two_state();
        let eta = discounted_future_state(&two.accurate, &two.policy).unwrap();
        for row in eta.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-10);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn eta_matches_truncated_series_oracle() {
        let two = build_two_state();
        let eta = discounted_future_state(&two.accurate, &two.policy).unwrap();
        // Independent oracle: (1-gamma) sum_{t<=10^4} gamma^t (P_hat^pi)^t.
        let ph = two.accurate.approx_kernel(&two.policy).unwrap();
        let gamma = 0.9;
        let mut acc = Array2::<f64>::eye(2);
        let mut power = Array2::<f64>::eye(2);
        for _ in 0..10_000 {
            power = power.dot(&ph).mapv(|v| gamma * v);
            acc = &acc + &power;
        }
        let oracle = acc.mapv(|v| (1.0 - gamma) * v);
        let dev = (&eta - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev < 1e-6, "max deviation {dev}");
    }

    #[test]
    fn concentrability_single_state() {
        let mut t = Array3::zeros((1, 1, 1));
        t[[0, 0, 0]] = 1.0;
        let mdp = TabularMdp::new(t, array![[1.0]], 0.9).unwrap();
        let pair = ModelPair::exact(mdp);
        let c = concentrability(&pair, &Policy::Deterministic(vec![0]), &array![1.0]).unwrap();
        assert!((c - 1.0 / 0.9).abs() < 1e-12);
    }

    #[test]
    fn concentrability_zero_weight_reachable_state_is_infinite() {
        let two = build_two_state();
        let c = concentrability(&two.accurate, &two.policy, &array![1.0, 0.0]).unwrap();
        assert!(c.is_infinite());
    }

    #[test]
    fn l4_discount_nonvacuous_for_tiny_perturbation() {
        // A nearly exact model keeps the weighted-L4 branch below one.
        let two = build_two_state();
        let mut ph = Array3::zeros((2, 1, 2));
        ph[[0, 0, 0]] = 0.89;
        ph[[0, 0, 1]] = 0.11;
        ph[[1, 0, 0]] = 0.095;
        ph[[1, 0, 1]] = 0.905;
        let pair = ModelPair::new(two.mdp.clone(), ph).unwrap();
        let rho = array![0.5, 0.5];
        let rep = effective_discount(&pair, &two.policy, Some(&rho), Mode::Pe).unwrap();
        let l4 = rep.gamma_prime_l4.unwrap();
        assert!(l4 < 1.0, "gamma'_l4 = {l4}");

        let run = osvi(
            &pair,
            Mode::Pe,
            Some(&two.policy),
            &Array1::zeros(2),
            25,
            InnerSolve::Exact,
        )
        .unwrap();
        let check =
            check_theorem_bounds(&run, Mode::Pe, l4, 0.0, 0.0, &BoundNorm::L4(rho.clone()));
        assert!(check.holds && !check.vacuous);
    }

    #[test]
    fn pe_bound_holds_on_accurate_two_state_run() {
        let two = build_two_state();
        let run = osvi(
            &two.accurate,
            Mode::Pe,
            Some(&two.policy),
            &Array1::zeros(2),
            30,
            InnerSolve::Exact,
        )
        .unwrap();
        let rep = effective_discount(&two.accurate, &two.policy, None, Mode::Pe).unwrap();
        let check = check_theorem_bounds(
            &run,
            Mode::Pe,
            rep.gamma_prime_sup,
            0.0,
            0.0,
            &BoundNorm::Sup,
        );
        assert!(check.holds && !check.vacuous);
        assert!(check.margins.iter().all(|&m| m >= -1e-9));
    }

    #[test]
    fn bound_from_fixed_point_start_has_zero_margin_at_zero() {
        let two = build_two_state();
        let v_pi = crate::solvers::solve_pe_direct(&two.mdp, &two.policy).unwrap();
        let run = osvi(
            &two.accurate,
            Mode::Pe,
            Some(&two.policy),
            &v_pi,
            3,
            InnerSolve::Exact,
        )
        .unwrap();
        let check = check_theorem_bounds(&run, Mode::Pe, 0.9, 0.0, 0.0, &BoundNorm::Sup);
        assert!(check.holds);
        assert!(check.margins[0].abs() < 1e-12);
    }

    #[test]
    fn exact_gain_norm_bounds_the_inaccurate_run() {
        // The sup bound 5.4 is vacuous for the inaccurate pair, but the exact
        // gain norm 0.9616 is below one and still governs the error decay.
        let two = build_two_state();
        let g_norm = gain_operator_norm(&two.inaccurate, &two.policy).unwrap();
        assert!(g_norm < 1.0);
        let run = osvi(
            &two.inaccurate,
            Mode::Pe,
            Some(&two.policy),
            &Array1::zeros(2),
            40,
            InnerSolve::Exact,
        )
        .unwrap();
        assert!(!run.diverged);
        let check = check_theorem_bounds(&run, Mode::Pe, g_norm, 0.0, 0.0, &BoundNorm::Sup);
        assert!(check.holds && !check.vacuous);
    }

    #[test]
    fn vacuous_bound_is_flagged() {
        let two = build_two_state();
        let run = osvi(
            &two.inaccurate,
            Mode::Pe,
            Some(&two.policy),
            &Array1::zeros(2),
            5,
            InnerSolve::Exact,
        )
        .unwrap();
        let check = check_theorem_bounds(&run, Mode::Pe, 5.4, 0.0, 0.0, &BoundNorm::Sup);
        assert!(check.holds && check.vacuous);
    }

    #[test]
    fn kl_bound_dominates_sup_error() {
        let two = build_two_state();
        let kl = kl_model_bound(&two.accurate, &two.policy).unwrap();
        let sup = sup_model_error(&two.accurate, Some(&two.policy)).unwrap();
        assert!(kl >= sup - 1e-10, "kl {kl} < sup {sup}");
        assert!(kl >= 0.1);
    }

    #[test]
    fn kl_identical_kernels_zero() {
        let two = build_two_state();
        let exact = ModelPair::exact(two.mdp.clone());
        assert_eq!(kl_model_bound(&exact, &two.policy).unwrap(), 0.0);
    }

    #[test]
    fn kl_disjoint_support_infinite() {
        let two = build_two_state();
        let mut ph = Array3::zeros((2, 1, 2));
        ph[[0, 0, 1]] = 1.0;
        ph[[1, 0, 0]] = 1.0;
        let pair = ModelPair::new(two.mdp.clone(), ph).unwrap();
        assert!(kl_model_bound(&pair, &two.policy).unwrap().is_infinite());
    }

    #[test]
    fn rho_must_be_a_distribution() {
        let two = build_two_state();
        assert!(chi2_weighted(&two.accurate, &two.policy, &array![0.7, 0.7]).is_err());
        assert!(concentrability(&two.accurate, &two.policy, &array![-0.5, 1.5]).is_err());
    }
}
