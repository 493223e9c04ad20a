//! Dense linear-algebra helpers shared by the solvers.
//!
//! Everything here operates on small dense systems (the lab targets MDPs with
//! at most a few hundred states), so an LU factorization is always adequate.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Residual tolerance for direct solves: the result of `solve` must satisfy
/// `||A x - b||_inf < DIRECT_SOLVE_RESIDUAL_TOL`.
pub const DIRECT_SOLVE_RESIDUAL_TOL: f64 = 1e-9;

/// Condition-number estimate above which a splitting matrix M is rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

pub(crate) fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

fn to_dvector(b: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(b.len(), b.iter().cloned())
}

fn from_dvector(v: &DVector<f64>) -> Array1<f64> {
    Array1::from_iter(v.iter().cloned())
}

/// A reusable LU factorization of a square matrix.
pub struct LuFactor {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl LuFactor {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::dims(format!(
                "LU needs a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let lu = to_dmatrix(a).lu();
        if lu.determinant().abs() == 0.0 {
            return Err(Error::Solver("singular matrix".into()));
        }
        Ok(LuFactor { lu })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let x = self
            .lu
            .solve(&to_dvector(b))
            .ok_or_else(|| Error::Solver("LU solve failed".into()))?;
        Ok(from_dvector(&x))
    }
}

/// Solves the dense system `A x = b` and validates the residual.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::dims(format!(
            "system is {}x{} but rhs has length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let x = LuFactor::new(a)?.solve(b)?;
    let residual = a.dot(&x) - b;
    let res_norm = residual.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !res_norm.is_finite() || res_norm >= DIRECT_SOLVE_RESIDUAL_TOL * (1.0 + inf_norm_vec(b)) {
        return Err(Error::Solver(format!(
            "direct solve residual {res_norm:.3e} exceeds tolerance"
        )));
    }
    Ok(x)
}

/// Dense inverse via LU.
pub fn inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::dims("inverse needs a square matrix"));
    }
    let inv = to_dmatrix(a)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Solver("singular matrix".into()))?;
    Ok(Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)]))
}

/// Matrix infinity norm (maximum absolute row sum).
pub fn inf_norm(a: &Array2<f64>) -> f64 {
    a.rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Vector infinity norm.
pub fn inf_norm_vec(v: &Array1<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Condition estimate `||A||_inf * ||A^-1||_inf`.
pub fn condition_estimate(a: &Array2<f64>) -> Result<f64> {
    Ok(inf_norm(a) * inf_norm(&inverse(a)?))
}

/// Power-iteration estimate of the spectral radius of `g`.
///
/// Runs `iters` matrix-vector products from a seeded random start and returns
/// the geometric mean of the norm-growth ratios over the trailing quarter of
/// the run, which stays stable when the dominant eigenvalue is complex. This
/// is a diagnostic estimate, not a certified bound.
pub fn spectral_radius_estimate(g: &Array2<f64>, iters: usize, seed: u64) -> f64 {
    let n = g.nrows();
    if n == 0 || iters == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
    let norm = |v: &Array1<f64>| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut ratios = Vec::with_capacity(iters);
    for _ in 0..iters {
        let x_norm = norm(&x);
        if x_norm == 0.0 || !x_norm.is_finite() {
            break;
        }
        let y = g.dot(&x);
        let y_norm = norm(&y);
        ratios.push(y_norm / x_norm);
        if y_norm == 0.0 {
            return 0.0;
        }
        x = y / y_norm;
    }
    if ratios.is_empty() {
        return 0.0;
    }
    let window = (ratios.len() / 4).max(1);
    let tail = &ratios[ratios.len() - window..];
    let log_mean = tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64;
    log_mean.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solve_small_system() {
        let a = array![[2.0, 0.0], [0.0, 4.0]];
        let b = array![2.0, 8.0];
        let x = solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert!((x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let b = array![1.0, 2.0];
        assert!(solve(&a, &b).is_err());
    }

    #[test]
    fn identity_solve_is_exact() {
        let a = Array2::eye(3);
        let b = array![0.3, -1.7, 2.25];
        let x = LuFactor::new(&a).unwrap().solve(&b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn spectral_radius_of_diagonal() {
        let g = array![[0.5, 0.0], [0.0, -0.8]];
        let rho = spectral_radius_estimate(&g, 200, 7);
        assert!((rho - 0.8).abs() < 1e-6, "rho = {rho}");
    }

    #[test]
    fn inf_norm_is_max_row_sum() {
        let a = array![[1.0, -2.0], [0.5, 0.25]];
        assert_eq!(inf_norm(&a), 3.0);
    }
}
