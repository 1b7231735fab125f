//! Knockoffs → statistics → path → bound, for one dataset.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff_gen::{
    assemble_augmented, precompute_sampler, select_s, CostVector, GaussianFeatureModel, KnockoffPlan,
};
use crate::path_select::{build_path, order_features, wfdp_bound, BoundParams, SelectionPath};
use crate::stat_engine::{
    compute_kappa_tau, compute_statistics, cross_validate_lambda, fit_lasso, CvOptions, Dataset, LassoOptions,
    StatisticTable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub cv: CvOptions,
    pub lasso: LassoOptions,
    pub bound: BoundParams,
    /// Multiplier applied to the feasibility-edge `s`.
    pub safety: f64,
    /// Skip cross-validation and use this penalty (full-data objective scale).
    pub fixed_lambda: Option<f64>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            cv: CvOptions::default(),
            lasso: LassoOptions::default(),
            bound: BoundParams::default(),
            safety: 1.0,
            fixed_lambda: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub s: Vec<f64>,
    pub table: StatisticTable,
    pub path: SelectionPath,
    pub ubar: Vec<f64>,
}

/// Chooses `s`, builds the sampler, and runs [`run_with_plan`].
pub fn run<R: Rng + ?Sized>(
    data: &Dataset,
    model: &GaussianFeatureModel,
    omega: &CostVector,
    opts: &PipelineOptions,
    rng: &mut R,
) -> Result<PipelineOutput> {
    let plan = build_plan(model, omega, opts.safety)?;
    run_with_plan(&plan, data, opts, rng)
}

pub fn build_plan(model: &GaussianFeatureModel, omega: &CostVector, safety: f64) -> Result<KnockoffPlan> {
    let sel = select_s(model, omega, safety)?;
    precompute_sampler(model, omega, &sel.s)
}

/// The `n × W` augmented design for `x` with freshly sampled knockoffs.
pub fn augmented_design<R: Rng + ?Sized>(plan: &KnockoffPlan, x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let knockoffs = plan.sample_knockoffs(x, rng)?;
    assemble_augmented(plan.index_map(), x, &knockoffs)
}

pub fn run_with_plan<R: Rng + ?Sized>(
    plan: &KnockoffPlan,
    data: &Dataset,
    opts: &PipelineOptions,
    rng: &mut R,
) -> Result<PipelineOutput> {
    let omega = plan.omega();
    if data.p() != omega.len() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} features, plan has {}",
            data.p(),
            omega.len()
        )));
    }
    let z = augmented_design(plan, &data.x, rng)?;
    let lambda = match opts.fixed_lambda {
        Some(l) => l,
        None => cross_validate_lambda(&z, &data.y, data.family, &opts.cv, rng)?.lambda,
    };
    let fit = fit_lasso(&z, &data.y, data.family, lambda, &opts.lasso)?;
    let table = compute_statistics(&fit.coef, omega, lambda)?;
    let table = compute_kappa_tau(table, omega, rng)?;
    let sigma = order_features(&table.tau, omega);
    let path = build_path(&sigma, &table.kappa, omega)?;
    let ubar = wfdp_bound(&path, omega, &opts.bound)?;
    Ok(PipelineOutput {
        s: plan.s().to_vec(),
        table,
        path,
        ubar,
    })
}
