//! K-fold cross-validation of the penalty level.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lasso::{sigmoid, GramProblem, LogisticState, Scaling, PROB_CLIP};
use super::Family;
use crate::error::{Error, Result};

/// Training-deviance fraction beyond which a fold's path is cut short.
pub const MAX_DEVIANCE_RATIO: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    pub grid_size: usize,
    /// Smallest grid value as a fraction of `λ_max`.
    pub min_ratio: f64,
    /// KKT tolerance for the path fits, relative to the largest absolute
    /// gradient at zero on each training fold.
    pub tol: f64,
    /// Sweep cap per path fit.
    pub max_iter: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            grid_size: 100,
            min_ratio: 1e-3,
            tol: 1e-4,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Selected penalty on the full-data objective scale (`n · λ'`).
    pub lambda: f64,
    /// Grid of per-observation penalties `λ'`, decreasing.
    pub grid: Vec<f64>,
    /// Mean out-of-fold deviance per grid point.
    pub cv_error: Vec<f64>,
    pub best_index: usize,
}

/// Chooses `λ` minimizing mean out-of-fold deviance over a log-spaced grid.
///
/// The grid runs from `λ'_max` (smallest per-observation penalty that zeroes
/// every standardized coefficient) down to `min_ratio · λ'_max`. Each fold's
/// fit on `n_train` rows uses penalty `n_train · λ'`, and the winner is
/// returned rescaled to the full `n`. Gaussian deviance is squared error,
/// binomial deviance is negative log-likelihood. Ties go to the larger `λ`.
///
/// A fold's path stops once its training fit explains more than
/// [`MAX_DEVIANCE_RATIO`] of the null deviance or has as many nonzeros as
/// training rows; the remaining grid points score `+∞` for that fold.
pub fn cross_validate_lambda<R: Rng + ?Sized>(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    opts: &CvOptions,
    rng: &mut R,
) -> Result<CvResult> {
    let n = z.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("design has {n} rows, response has {}", y.len())));
    }
    if opts.folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {}", opts.folds)));
    }
    if opts.grid_size < 1 || !(opts.min_ratio > 0.0 && opts.min_ratio < 1.0) {
        return Err(Error::InvalidParameter("grid_size >= 1 and min_ratio in (0, 1) required".into()));
    }
    if n < 2 * opts.folds {
        return Err(Error::InvalidParameter(format!(
            "{n} observations cannot fill {} folds with at least 2 each",
            opts.folds
        )));
    }

    let lambda_max = lambda_max_per_obs(z, y, family)?;
    let grid = log_grid(lambda_max, opts.min_ratio, opts.grid_size);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % opts.folds;
    }

    let mut total = vec![0.0; grid.len()];
    for fold in 0..opts.folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let errors = fold_path(z, y, family, &train, &test, &grid, opts)?;
        for (t, e) in total.iter_mut().zip(errors) {
            *t += e;
        }
    }
    let cv_error: Vec<f64> = total.iter().map(|t| t / opts.folds as f64).collect();
    let best_index = cv_error
        .iter()
        .enumerate()
        .fold(0, |best, (i, &e)| if e < cv_error[best] { i } else { best });

    Ok(CvResult {
        lambda: n as f64 * grid[best_index],
        grid,
        cv_error,
        best_index,
    })
}

/// Smallest per-observation penalty with an all-zero standardized solution.
pub fn lambda_max_per_obs(z: &DMatrix<f64>, y: &DVector<f64>, family: Family) -> Result<f64> {
    let n = z.nrows() as f64;
    let xs = Scaling::fit(z, family, true)?.apply(z);
    let target = match family {
        Family::Gaussian => y.clone(),
        Family::Binomial => y.add_scalar(-y.mean()),
    };
    Ok(xs.tr_mul(&target).amax() / n)
}

fn log_grid(lambda_max: f64, min_ratio: f64, size: usize) -> Vec<f64> {
    let top = lambda_max.max(f64::MIN_POSITIVE);
    if size == 1 {
        return vec![top];
    }
    (0..size)
        .map(|k| top * min_ratio.powf(k as f64 / (size - 1) as f64))
        .collect()
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_rows(idx)
}

/// Out-of-fold deviance along the grid for one train/test split, warm-started.
fn fold_path(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    train: &[usize],
    test: &[usize],
    grid: &[f64],
    opts: &CvOptions,
) -> Result<Vec<f64>> {
    let z_train = rows(z, train);
    let y_train = DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let z_test = rows(z, test);
    let y_test = DVector::from_iterator(test.len(), test.iter().map(|&i| y[i]));
    let n_train = train.len() as f64;
    let scaling = Scaling::fit(&z_train, family, true)?;
    let xs = scaling.apply(&z_train);

    let mut errors = Vec::with_capacity(grid.len());
    let interpolating = |beta: &DVector<f64>, ratio: f64| {
        ratio > MAX_DEVIANCE_RATIO || beta.iter().filter(|&&b| b != 0.0).count() >= train.len()
    };
    match family {
        Family::Gaussian => {
            let problem = GramProblem::new(&xs, &y_train);
            let tol = opts.tol * problem.gradient_scale().max(f64::MIN_POSITIVE);
            let null_dev = y_train.norm_squared();
            let mut beta = DVector::zeros(z.ncols());
            for &lam in grid {
                problem.solve(n_train * lam, &mut beta, tol, opts.max_iter)?;
                let (coef, _) = scaling.unscale(&beta, 0.0);
                let resid = &y_test - &z_test * &coef;
                errors.push(resid.norm_squared() / test.len() as f64);
                let train_dev = (&y_train - &xs * &beta).norm_squared();
                if null_dev > 0.0 && interpolating(&beta, 1.0 - train_dev / null_dev) {
                    break;
                }
            }
        }
        Family::Binomial => {
            let mut state = LogisticState::new(&xs, &y_train);
            let centered = y_train.add_scalar(-y_train.mean());
            let tol = opts.tol * xs.tr_mul(&centered).amax().max(f64::MIN_POSITIVE);
            let null_dev = state.deviance(&xs, &y_train);
            for &lam in grid {
                state.solve(&xs, &y_train, n_train * lam, tol, opts.max_iter);
                let (coef, intercept) = scaling.unscale(&state.beta, state.b0);
                let eta = (&z_test * coef).add_scalar(intercept);
                let nll: f64 = eta
                    .iter()
                    .zip(y_test.iter())
                    .map(|(&e, &yi)| {
                        let p = sigmoid(e).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                        -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
                    })
                    .sum();
                errors.push(nll / test.len() as f64);
                let ratio = 1.0 - state.deviance(&xs, &y_train) / null_dev;
                if null_dev > 0.0 && interpolating(&state.beta, ratio) {
                    break;
                }
            }
        }
    }
    errors.resize(grid.len(), f64::INFINITY);
    Ok(errors)
}
