//! Generic matrix-splitting iteration for linear systems `A z = b`.
//!
//! A splitting `A = M - N` turns the system into the fixed-point iteration
//! `z_k = M^-1 (N z_{k-1} + b)`, whose error contracts like powers of
//! `G = M^-1 N`. Policy evaluation is the instance `A = I - gamma P^pi`,
//! `b = r^pi` with `M = I`; Jacobi and Gauss-Seidel are the usual choices.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{self, LuFactor};
use crate::mdp::InducedKernel;
use crate::trajectory::RunTrajectory;

/// A named splitting `A = M - N` for the system `A z = b`.
#[derive(Clone, Debug)]
pub struct SplittingScheme {
    pub name: String,
    pub m: Array2<f64>,
    pub n: Array2<f64>,
    pub b: Array1<f64>,
}

/// Elementwise tolerance for `M - N == A`.
pub const SPLIT_CONSISTENCY_TOL: f64 = 1e-10;

impl SplittingScheme {
    /// Builds a scheme from explicit parts, checking `M - N = A` elementwise
    /// and that `M` is comfortably invertible.
    pub fn from_parts(
        name: impl Into<String>,
        m: Array2<f64>,
        n: Array2<f64>,
        b: Array1<f64>,
        a: &Array2<f64>,
    ) -> Result<Self> {
        let name = name.into();
        if m.dim() != a.dim() || n.dim() != a.dim() || b.len() != a.nrows() {
            return Err(Error::dims(format!("scheme {name}: shape mismatch with A")));
        }
        let max_dev = (&m - &n - a)
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if max_dev > SPLIT_CONSISTENCY_TOL {
            return Err(Error::invalid(format!(
                "scheme {name}: M - N deviates from A by {max_dev:.3e}"
            )));
        }
        let cond = linalg::condition_estimate(&m)
            .map_err(|_| Error::invalid(format!("scheme {name}: M is singular")))?;
        if cond > linalg::CONDITION_LIMIT {
            return Err(Error::invalid(format!(
                "scheme {name}: condition estimate {cond:.3e} of M too large"
            )));
        }
        Ok(SplittingScheme { name, m, n, b })
    }

    /// Jacobi splitting: `M = diag(A)`, `N = M - A`.
    pub fn jacobi(a: &Array2<f64>, b: &Array1<f64>) -> Result<Self> {
        let m = Array2::from_diag(&a.diag().to_owned());
        let n = &m - a;
        Self::from_parts("jacobi", m, n, b.clone(), a)
    }

    /// Forward Gauss-Seidel splitting: `M = D - L` (lower triangle including
    /// the diagonal), `N = U` (strictly upper triangle).
    pub fn gauss_seidel(a: &Array2<f64>, b: &Array1<f64>) -> Result<Self> {
        let dim = a.nrows();
        let mut m = Array2::zeros((dim, dim));
        let mut n = Array2::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                if j <= i {
                    m[[i, j]] = a[[i, j]];
                } else {
                    n[[i, j]] = -a[[i, j]];
                }
            }
        }
        Self::from_parts("gauss-seidel", m, n, b.clone(), a)
    }

    /// The splitting that value iteration instantiates: `M = I`,
    /// `N = gamma P^pi`, `b = r^pi` for the system `(I - gamma P^pi) V = r^pi`.
    pub fn value_iteration(kernel: &InducedKernel, discount: f64) -> Self {
        let dim = kernel.reward.len();
        SplittingScheme {
            name: "value-iteration".into(),
            m: Array2::eye(dim),
            n: kernel.matrix.mapv(|p| discount * p),
            b: kernel.reward.clone(),
        }
    }

    pub fn system_matrix(&self) -> Array2<f64> {
        &self.m - &self.n
    }
}

/// Result of running a splitting iteration.
#[derive(Clone, Debug)]
pub struct SplitRun {
    pub trajectory: RunTrajectory,
    /// Iterates `z_0, z_1, ..., z_K`.
    pub iterates: Vec<Array1<f64>>,
    /// Direct solution of `A z = b`.
    pub solution: Array1<f64>,
    /// Exact `||M^-1 N||_inf`.
    pub gain_inf_norm: f64,
    /// Power-iteration estimate of the spectral radius of `M^-1 N`.
    pub spectral_estimate: f64,
    /// Set when the spectral estimate is >= 1.
    pub predicted_divergent: bool,
    /// First iteration at which consecutive iterates came within `tol`.
    pub converged_at: Option<usize>,
    pub final_delta: f64,
}

/// Number of power iterations used for the spectral-radius estimate.
pub const SPECTRAL_ITERS: usize = 200;
const SPECTRAL_SEED: u64 = 0x5eed;

/// Runs `z_k = M^-1 (N z_{k-1} + b)` for up to `iters` steps, stopping early
/// once consecutive iterates are within `tol` in the sup norm. Records the
/// sup-norm error against the direct solution per iteration.
pub fn splitting_solve(
    scheme: &SplittingScheme,
    z0: &Array1<f64>,
    iters: usize,
    tol: f64,
) -> Result<SplitRun> {
    let a = scheme.system_matrix();
    if z0.len() != scheme.b.len() {
        return Err(Error::dims("z0 length does not match the system"));
    }
    let solution = linalg::solve(&a, &scheme.b)?;
    let m_factor = LuFactor::new(&scheme.m).map_err(|_| Error::Solver("singular M".into()))?;

    let gain = m_factor_apply(&m_factor, &scheme.n)?;
    let gain_inf_norm = linalg::inf_norm(&gain);
    let spectral_estimate = linalg::spectral_radius_estimate(&gain, SPECTRAL_ITERS, SPECTRAL_SEED);

    let mut trajectory = RunTrajectory::new(scheme.name.clone(), 0);
    let mut iterates = vec![z0.clone()];
    let mut z = z0.clone();
    trajectory.push(0, "sup_error", sup_dist(&z, &solution));

    let mut converged_at = None;
    let mut final_delta = f64::INFINITY;
    for k in 1..=iters {
        let next = m_factor.solve(&(scheme.n.dot(&z) + &scheme.b))?;
        final_delta = sup_dist(&next, &z);
        z = next;
        iterates.push(z.clone());
        trajectory.push(k as u64, "sup_error", sup_dist(&z, &solution));
        trajectory.push(k as u64, "delta", final_delta);
        if final_delta < tol {
            converged_at = Some(k);
            break;
        }
        if !z.iter().all(|v| v.is_finite()) {
            trajectory.diverged = true;
            break;
        }
    }
    if trajectory
        .series("sup_error")
        .iter()
        .any(|&(_, e)| !e.is_finite() || e > crate::trajectory::DIVERGENCE_LIMIT)
    {
        trajectory.diverged = true;
    }

    Ok(SplitRun {
        trajectory,
        iterates,
        solution,
        gain_inf_norm,
        spectral_estimate,
        predicted_divergent: spectral_estimate >= 1.0,
        converged_at,
        final_delta,
    })
}

/// Forms `M^-1 N` column by column through the factorization.
fn m_factor_apply(m: &LuFactor, n: &Array2<f64>) -> Result<Array2<f64>> {
    let dim = n.nrows();
    let mut out = Array2::zeros((dim, dim));
    for j in 0..n.ncols() {
        let col = m.solve(&n.column(j).to_owned())?;
        for i in 0..dim {
            out[[i, j]] = col[i];
        }
    }
    Ok(out)
}

pub(crate) fn sup_dist(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn diag_dominant_system() -> (Array2<f64>, Array1<f64>) {
        (array![[4.0, 1.0], [2.0, 5.0]], array![1.0, -3.0])
    }

    #[test]
    fn from_parts_rejects_inconsistent_split() {
        let (a, b) = diag_dominant_system();
        let m = Array2::eye(2);
        let n = Array2::zeros((2, 2));
        assert!(SplittingScheme::from_parts("bad", m, n, b, &a).is_err());
    }

    #[test]
    fn from_parts_rejects_singular_m() {
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        let m = array![[1.0, 1.0], [1.0, 1.0]];
        let n = &m - &a;
        assert!(SplittingScheme::from_parts("sing", m, n, array![0.0, 0.0], &a).is_err());
    }

    #[test]
    fn jacobi_converges_on_diagonally_dominant_system() {
        let (a, b) = diag_dominant_system();
        let scheme = SplittingScheme::jacobi(&a, &b).unwrap();
        let run = splitting_solve(&scheme, &Array1::zeros(2), 500, 1e-14).unwrap();
        let err = sup_dist(run.iterates.last().unwrap(), &run.solution);
        assert!(err < 1e-12, "err = {err}");
        assert!(!run.predicted_divergent);
    }

    #[test]
    fn gauss_seidel_converges_on_diagonally_dominant_system() {
        let (a, b) = diag_dominant_system();
        let scheme = SplittingScheme::gauss_seidel(&a, &b).unwrap();
        let run = splitting_solve(&scheme, &Array1::zeros(2), 500, 1e-14).unwrap();
        let err = sup_dist(run.iterates.last().unwrap(), &run.solution);
        assert!(err < 1e-12, "err = {err}");
    }

    #[test]
    fn divergent_split_is_predicted() {
        // M = I, N = I - A with A = I - 1.5 I => N = 1.5 I, spectral radius 1.5.
        let a = array![[-0.5, 0.0], [0.0, -0.5]];
        let m = Array2::eye(2);
        let n = &m - &a;
        let scheme = SplittingScheme::from_parts("diverge", m, n, array![1.0, 1.0], &a).unwrap();
        let run = splitting_solve(&scheme, &array![1.0, 1.0], 200, 1e-12).unwrap();
        assert!(run.predicted_divergent);
        assert!(run.trajectory.diverged);
    }
}
