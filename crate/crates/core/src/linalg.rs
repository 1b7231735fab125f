//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

/// Jitter ladder, as fractions of the reference trace, tried in order.
const JITTER_LADDER: [f64; 5] = [0.0, 1e-16, 1e-14, 1e-12, 1e-10];

/// Cholesky factor of `a + εI` for the smallest ε on the ladder that works,
/// with ε never exceeding `1e-10 · reference_trace`.
///
/// Returns the factor and the jitter actually added.
pub fn jittered_cholesky(
    a: &DMatrix<f64>,
    reference_trace: f64,
) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Cholesky::new(a.clone()).map(|c| (c, 0.0));
    }
    for frac in JITTER_LADDER {
        let eps = frac * reference_trace.abs();
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(m) {
            let l = c.l_dirty();
            if (0..n).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
                return Some((c, eps));
            }
        }
    }
    None
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// `rows × cols` matrix of iid standard normals, drawn row by row.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Sample covariance (divisor `n`) of the columns of `x` around `center`.
pub fn covariance_about(x: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-center[j]);
    }
    centered.tr_mul(&centered) / n
}

/// Least squares with an unpenalized intercept on the given columns of `x`.
///
/// Returns `(intercept, coefficients)`.
pub fn ols_with_intercept(x: &DMatrix<f64>, y: &DVector<f64>, columns: &[usize]) -> (f64, DVector<f64>) {
    let n = x.nrows();
    let mut design = DMatrix::from_element(n, columns.len() + 1, 1.0);
    for (c, &j) in columns.iter().enumerate() {
        design.set_column(c + 1, &x.column(j));
    }
    let svd = design.svd(true, true);
    let sol = svd
        .solve(y, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(columns.len() + 1));
    (sol[0], sol.rows(1, columns.len()).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jitter_repairs_rank_deficient_zero_matrix() {
        let zero = DMatrix::<f64>::zeros(3, 3);
        let (_, eps) = jittered_cholesky(&zero, 3.0).expect("jitter should succeed");
        assert!(eps > 0.0 && eps <= 3e-10);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(jittered_cholesky(&m, 2.0).is_none());
        assert_relative_eq!(min_eigenvalue(&m), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_recovers_exact_linear_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 2.0, 1.0, 3.0, 5.0, 4.0, 2.0]);
        let y = DVector::from_fn(4, |i, _| 1.5 + 2.0 * x[(i, 0)] - x[(i, 1)]);
        let (b0, b) = ols_with_intercept(&x, &y, &[0, 1]);
        assert_relative_eq!(b0, 1.5, epsilon = 1e-10);
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(b[1], -1.0, epsilon = 1e-10);
        let (b0, b) = ols_with_intercept(&x, &y, &[]);
        assert_eq!(b.len(), 0);
        assert_relative_eq!(b0, y.mean(), epsilon = 1e-12);
    }
}
