//! Coordinate-descent solvers for the ℓ₁-penalized least-squares and logistic
//! problems on the augmented design.
//!
//! Penalty scale follows the unnormalized objective
//! `½‖y − Zθ‖² + λ‖θ‖₁` (gaussian) and `−loglik(θ₀, θ) + λ‖θ‖₁` (binomial).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Family;
use crate::error::{Error, Result};

/// Outer reweighting steps for the binomial family.
pub const MAX_IRLS_STEPS: usize = 25;
/// Fitted probabilities are clipped to `[PROB_CLIP, 1 − PROB_CLIP]` when forming weights.
pub const PROB_CLIP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// KKT tolerance on the (possibly standardized) problem.
    pub tol: f64,
    /// Cap on coordinate-descent sweeps (per reweighting step for binomial).
    pub max_iter: usize,
    /// Rescale columns before fitting and map coefficients back afterwards.
    /// Gaussian columns are scaled to unit mean square without centering;
    /// binomial columns are centered and scaled to unit variance.
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 100_000,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    /// Coefficients on the original column scale.
    pub coef: DVector<f64>,
    /// Zero for the gaussian family.
    pub intercept: f64,
    pub lambda: f64,
    /// Largest KKT violation of the solved problem.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits the penalized model and fails if the KKT tolerance is not reached.
pub fn fit_lasso(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let fit = fit_lasso_unchecked(z, y, family, lambda, opts)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            residual: fit.kkt_residual,
        });
    }
    Ok(fit)
}

/// Like [`fit_lasso`] but returns the last iterate when the tolerance is missed.
pub fn fit_lasso_unchecked(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    family: Family,
    lambda: f64,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("lambda {lambda} must be positive")));
    }
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows, response has {}",
            z.nrows(),
            y.len()
        )));
    }
    let scaling = Scaling::fit(z, family, opts.standardize)?;
    match family {
        Family::Gaussian => {
            let problem = GramProblem::new(&scaling.apply(z), y);
            let mut beta = DVector::zeros(z.ncols());
            let status = problem.solve(lambda, &mut beta, opts.tol, opts.max_iter)?;
            let (coef, _) = scaling.unscale(&beta, 0.0);
            Ok(LassoFit {
                coef,
                intercept: 0.0,
                lambda,
                kkt_residual: status.kkt,
                iterations: status.iterations,
                converged: status.converged,
            })
        }
        Family::Binomial => {
            let xs = scaling.apply(z);
            let mut state = LogisticState::new(&xs, y);
            let status = state.solve(&xs, y, lambda, opts.tol, opts.max_iter);
            let (coef, intercept) = scaling.unscale(&state.beta, state.b0);
            Ok(LassoFit {
                coef,
                intercept,
                lambda,
                kkt_residual: status.kkt,
                iterations: status.iterations,
                converged: status.converged,
            })
        }
    }
}

/// Per-column affine map `x ↦ (x − center) / scale`.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaling {
    pub(crate) fn fit(z: &DMatrix<f64>, family: Family, standardize: bool) -> Result<Self> {
        let w = z.ncols();
        let n = z.nrows() as f64;
        if !standardize {
            if family == Family::Gaussian {
                if let Some(j) = (0..w).find(|&j| z.column(j).norm_squared() == 0.0) {
                    return Err(Error::DegenerateColumn(j));
                }
            }
            return Ok(Self {
                center: vec![0.0; w],
                scale: vec![1.0; w],
            });
        }
        let mut center = vec![0.0; w];
        let mut scale = vec![1.0; w];
        for j in 0..w {
            let col = z.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if !(var > 1e-24 * (1.0 + mean * mean)) {
                return Err(Error::DegenerateColumn(j));
            }
            match family {
                Family::Gaussian => scale[j] = (col.norm_squared() / n).sqrt(),
                Family::Binomial => {
                    center[j] = mean;
                    scale[j] = var.sqrt();
                }
            }
        }
        Ok(Self { center, scale })
    }

    pub(crate) fn apply(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (c, s) = (self.center[j], self.scale[j]);
            col.apply(|v| *v = (*v - c) / s);
        }
        out
    }

    pub(crate) fn unscale(&self, beta: &DVector<f64>, b0: f64) -> (DVector<f64>, f64) {
        let coef = DVector::from_fn(beta.len(), |j, _| beta[j] / self.scale[j]);
        let intercept = b0 - coef.iter().zip(&self.center).map(|(c, m)| c * m).sum::<f64>();
        (coef, intercept)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct SolveStatus {
    pub iterations: usize,
    pub kkt: f64,
    pub converged: bool,
}

#[inline]
pub(crate) fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// KKT violation of coordinate `j` given `grad = −∂loss/∂β_j`.
#[inline]
fn kkt_violation(grad: f64, beta: f64, lambda: f64) -> f64 {
    if beta == 0.0 {
        (grad.abs() - lambda).max(0.0)
    } else {
        (grad - lambda * beta.signum()).abs()
    }
}

/// Least-squares lasso in covariance form: `½βᵀGβ − cᵀβ + λ‖β‖₁`.
pub(crate) struct GramProblem {
    gram: DMatrix<f64>,
    xty: DVector<f64>,
}

impl GramProblem {
    pub(crate) fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: x.tr_mul(x),
            xty: x.tr_mul(y),
        }
    }

    /// `‖Xᵀy‖∞`, the largest gradient magnitude at `β = 0`.
    pub(crate) fn gradient_scale(&self) -> f64 {
        self.xty.amax()
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut g = self.xty.clone();
        for (k, &b) in beta.iter().enumerate() {
            if b != 0.0 {
                g.axpy(-b, &self.gram.column(k), 1.0);
            }
        }
        g
    }

    fn kkt(&self, g: &DVector<f64>, beta: &DVector<f64>, lambda: f64) -> f64 {
        (0..beta.len())
            .map(|j| kkt_violation(g[j], beta[j], lambda))
            .fold(0.0, f64::max)
    }

    /// One pass over `coords`; returns the largest scaled coefficient change.
    fn sweep(&self, coords: &[usize], lambda: f64, beta: &mut DVector<f64>, g: &mut DVector<f64>) -> f64 {
        let mut max_change = 0.0_f64;
        for &j in coords {
            let hjj = self.gram[(j, j)];
            let old = beta[j];
            let new = soft_threshold(g[j] + hjj * old, lambda) / hjj;
            if new != old {
                let delta = new - old;
                g.axpy(-delta, &self.gram.column(j), 1.0);
                beta[j] = new;
                max_change = max_change.max(delta.abs() * hjj);
            }
        }
        max_change
    }

    pub(crate) fn solve(&self, lambda: f64, beta: &mut DVector<f64>, tol: f64, max_iter: usize) -> Result<SolveStatus> {
        let w = beta.len();
        if let Some(j) = (0..w).find(|&j| !(self.gram[(j, j)] > 0.0)) {
            return Err(Error::DegenerateColumn(j));
        }
        let all: Vec<usize> = (0..w).collect();
        let mut g = self.gradient(beta);
        let mut iterations = 0;
        #[cfg(debug_assertions)]
        let mut last_obj = self.objective(beta, lambda);
        loop {
            self.sweep(&all, lambda, beta, &mut g);
            iterations += 1;
            #[cfg(debug_assertions)]
            {
                let obj = self.objective(beta, lambda);
                debug_assert!(obj <= last_obj + 1e-9 * (1.0 + last_obj.abs()), "objective increased");
                last_obj = obj;
            }
            g = self.gradient(beta);
            let kkt = self.kkt(&g, beta, lambda);
            if kkt <= tol {
                return Ok(SolveStatus {
                    iterations,
                    kkt,
                    converged: true,
                });
            }
            if iterations >= max_iter {
                return Ok(SolveStatus {
                    iterations,
                    kkt,
                    converged: false,
                });
            }
            let active: Vec<usize> = (0..w).filter(|&j| beta[j] != 0.0).collect();
            while iterations < max_iter {
                self.sweep(&active, lambda, beta, &mut g);
                iterations += 1;
                let inner = active
                    .iter()
                    .map(|&j| kkt_violation(g[j], beta[j], lambda))
                    .fold(0.0, f64::max);
                if inner <= 0.1 * tol {
                    break;
                }
            }
        }
    }

    #[cfg(debug_assertions)]
    fn objective(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * (beta.transpose() * &self.gram * beta)[(0, 0)] - self.xty.dot(beta) + lambda * beta.lp_norm(1)
    }
}

#[inline]
pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^η)` without overflow.
#[inline]
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Iterate of the penalized logistic fit on a fixed design.
pub(crate) struct LogisticState {
    pub beta: DVector<f64>,
    pub b0: f64,
}

impl LogisticState {
    pub(crate) fn new(xs: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let ybar = y.mean().clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        Self {
            beta: DVector::zeros(xs.ncols()),
            b0: (ybar / (1.0 - ybar)).ln(),
        }
    }

    fn linear_predictor(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        let mut eta = DVector::from_element(xs.nrows(), self.b0);
        for (j, &b) in self.beta.iter().enumerate() {
            if b != 0.0 {
                eta.axpy(b, &xs.column(j), 1.0);
            }
        }
        eta
    }

    /// Unpenalized negative log-likelihood of the current fit.
    pub(crate) fn deviance(&self, xs: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let eta = self.linear_predictor(xs);
        eta.iter().zip(y.iter()).map(|(&e, &yi)| log1p_exp(e) - yi * e).sum()
    }

    fn objective(&self, eta: &DVector<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let nll: f64 = eta.iter().zip(y.iter()).map(|(&e, &yi)| log1p_exp(e) - yi * e).sum();
        nll + lambda * self.beta.lp_norm(1)
    }

    fn kkt(&self, xs: &DMatrix<f64>, eta: &DVector<f64>, y: &DVector<f64>, lambda: f64) -> f64 {
        let resid = DVector::from_fn(y.len(), |i, _| y[i] - sigmoid(eta[i]));
        let mut worst = resid.sum().abs();
        for j in 0..self.beta.len() {
            let g = xs.column(j).dot(&resid);
            worst = worst.max(kkt_violation(g, self.beta[j], lambda));
        }
        worst
    }

    /// Proximal Newton: quadratic approximation with clipped weights, inner
    /// coordinate descent, and step halving if the true objective rises.
    pub(crate) fn solve(
        &mut self,
        xs: &DMatrix<f64>,
        y: &DVector<f64>,
        lambda: f64,
        tol: f64,
        max_inner: usize,
    ) -> SolveStatus {
        let n = xs.nrows();
        let w = xs.ncols();
        let mut iterations = 0;
        let mut eta = self.linear_predictor(xs);
        let mut kkt = self.kkt(xs, &eta, y, lambda);
        let mut obj = self.objective(&eta, y, lambda);
        for _ in 0..MAX_IRLS_STEPS {
            if kkt <= tol {
                return SolveStatus {
                    iterations,
                    kkt,
                    converged: true,
                };
            }
            let mut weights = DVector::zeros(n);
            let mut resid = DVector::zeros(n);
            for i in 0..n {
                // Only the curvature is clipped; the gradient keeps the true
                // probability so the fixed point satisfies the real KKT conditions.
                let p = sigmoid(eta[i]);
                let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                weights[i] = pc * (1.0 - pc);
                resid[i] = (y[i] - p) / weights[i];
            }
            let hess: Vec<f64> = (0..w)
                .map(|j| xs.column(j).iter().zip(weights.iter()).map(|(x, wi)| wi * x * x).sum())
                .collect();
            let wsum = weights.sum();
            let old_beta = self.beta.clone();
            let old_b0 = self.b0;
            // Inexact Newton: the inner solve only needs to beat the current outer residual.
            let inner_tol = (0.1 * kkt).max(0.1 * tol);
            iterations += weighted_cd(xs, &weights, &hess, wsum, &mut resid, &mut self.beta, &mut self.b0, lambda, inner_tol, max_inner);

            let mut new_eta = self.linear_predictor(xs);
            let mut new_obj = self.objective(&new_eta, y, lambda);
            let mut halvings = 0;
            while new_obj > obj + 1e-12 * obj.abs() && halvings < 30 {
                self.beta = (&self.beta + &old_beta) * 0.5;
                self.b0 = 0.5 * (self.b0 + old_b0);
                new_eta = self.linear_predictor(xs);
                new_obj = self.objective(&new_eta, y, lambda);
                halvings += 1;
            }
            eta = new_eta;
            obj = new_obj;
            kkt = self.kkt(xs, &eta, y, lambda);
        }
        SolveStatus {
            iterations,
            kkt,
            converged: kkt <= tol,
        }
    }
}

/// Minimizes `½Σ wᵢ(rᵢ − Δb₀ − xᵢΔβ)² + λ‖β‖₁` by coordinate descent, where
/// `r` is the working residual at entry and is kept current in place.
#[allow(clippy::too_many_arguments)]
fn weighted_cd(
    xs: &DMatrix<f64>,
    weights: &DVector<f64>,
    hess: &[f64],
    wsum: f64,
    resid: &mut DVector<f64>,
    beta: &mut DVector<f64>,
    b0: &mut f64,
    lambda: f64,
    tol: f64,
    max_sweeps: usize,
) -> usize {
    let w = beta.len();
    let n = xs.nrows();
    let all: Vec<usize> = (0..w).collect();

    let update_intercept = |resid: &mut DVector<f64>, b0: &mut f64| {
        let delta = weights.dot(resid) / wsum;
        if delta != 0.0 {
            *b0 += delta;
            resid.add_scalar_mut(-delta);
        }
    };
    let grad = |j: usize, resid: &DVector<f64>| -> f64 {
        let col = xs.column(j);
        let mut acc = 0.0;
        for i in 0..n {
            acc += weights[i] * col[i] * resid[i];
        }
        acc
    };
    let sweep = |coords: &[usize], resid: &mut DVector<f64>, beta: &mut DVector<f64>| {
        for &j in coords {
            if hess[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            let new = soft_threshold(grad(j, resid) + hess[j] * old, lambda) / hess[j];
            if new != old {
                resid.axpy(-(new - old), &xs.column(j), 1.0);
                beta[j] = new;
            }
        }
    };
    let violation = |coords: &[usize], resid: &DVector<f64>, beta: &DVector<f64>| -> f64 {
        coords
            .iter()
            .map(|&j| kkt_violation(grad(j, resid), beta[j], lambda))
            .fold(weights.dot(resid).abs(), f64::max)
    };

    let mut sweeps = 0;
    loop {
        update_intercept(resid, b0);
        sweep(&all, resid, beta);
        update_intercept(resid, b0);
        sweeps += 1;
        if sweeps >= max_sweeps || violation(&all, resid, beta) <= tol {
            return sweeps;
        }
        let active: Vec<usize> = (0..w).filter(|&j| beta[j] != 0.0).collect();
        while sweeps < max_sweeps {
            sweep(&active, resid, beta);
            update_intercept(resid, b0);
            sweeps += 1;
            if violation(&active, resid, beta) <= tol {
                break;
            }
        }
    }
}
