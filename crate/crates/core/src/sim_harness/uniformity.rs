//! Null calibration of `κ`: with a signal-free response every copy of a
//! feature is exchangeable, so `κ_j` should be uniform on `{1, …, ω_j}`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::knockoff_gen::{CostVector, GaussianFeatureModel, KnockoffPlan};
use crate::linalg::standard_normal_matrix;
use crate::pipeline::{build_plan, run_with_plan, PipelineOptions};
use crate::rng::stream;
use crate::stat_engine::{Dataset, Family};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    pub reps: usize,
    pub failed: usize,
    /// `counts[j][ℓ]`: replicates with `κ_j = ℓ + 1`.
    pub counts: Vec<Vec<usize>>,
    pub chi_square: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Empirical `P(κ_j = 1)`.
    pub freq_original: Vec<f64>,
}

/// Runs `reps` null replicates (`y` independent of `X`) and tallies `κ`.
pub fn null_kappa_uniformity(
    model: &GaussianFeatureModel,
    omega: &CostVector,
    n: usize,
    reps: usize,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<UniformityReport> {
    let plan = build_plan(model, omega, opts.safety)?;
    null_kappa_uniformity_with_plan(&plan, n, reps, seed, opts)
}

/// As [`null_kappa_uniformity`], with a prebuilt knockoff plan.
pub fn null_kappa_uniformity_with_plan(
    plan: &KnockoffPlan,
    n: usize,
    reps: usize,
    seed: u64,
    opts: &PipelineOptions,
) -> Result<UniformityReport> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be >= 1".into()));
    }
    let model = plan.model();
    let omega = plan.omega();
    let kappas: Vec<Option<Vec<u32>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r as u64);
            let x = model.sample(n, &mut rng).ok()?;
            let y: DVector<f64> = standard_normal_matrix(n, 1, &mut rng).column(0).into_owned();
            let data = Dataset::new(x, y, Family::Gaussian).ok()?;
            match run_with_plan(plan, &data, opts, &mut rng) {
                Ok(out) => Some(out.table.kappa),
                Err(e) => {
                    log::warn!("null replicate {r} failed: {e}");
                    None
                }
            }
        })
        .collect();

    let p = omega.len();
    let mut counts: Vec<Vec<usize>> = (0..p).map(|j| vec![0; omega.get(j) as usize]).collect();
    let mut ok = 0;
    for kappa in kappas.iter().flatten() {
        ok += 1;
        for (j, &k) in kappa.iter().enumerate() {
            counts[j][k as usize - 1] += 1;
        }
    }
    if ok == 0 {
        return Err(Error::TooManyFailures { failed: reps, total: reps });
    }
    let mut chi_square = Vec::with_capacity(p);
    let mut p_values = Vec::with_capacity(p);
    for row in &counts {
        let (stat, pv) = chi_square_uniform(row);
        chi_square.push(stat);
        p_values.push(pv);
    }
    let freq_original = counts.iter().map(|c| c[0] as f64 / ok as f64).collect();
    Ok(UniformityReport {
        reps,
        failed: reps - ok,
        counts,
        chi_square,
        p_values,
        freq_original,
    })
}

/// Pearson goodness-of-fit statistic against the uniform law and its p-value.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let cells = counts.len();
    if cells < 2 || total == 0 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / cells as f64;
    let stat: f64 = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
    (stat, 1.0 - dist.cdf(stat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_of_perfectly_uniform_counts() {
        let (stat, p) = chi_square_uniform(&[50, 50, 50]);
        assert_eq!(stat, 0.0);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_known_value() {
        // (60-50)²/50 + (40-50)²/50 = 4 on 1 df: p = P(|N(0,1)| > 2).
        let (stat, p) = chi_square_uniform(&[60, 40]);
        assert!((stat - 4.0).abs() < 1e-12);
        assert!((p - 0.045_500_263_896_358_4).abs() < 1e-9);
    }

    #[test]
    fn small_null_study_runs() {
        let omega = CostVector::new(vec![2, 3]).unwrap();
        let opts = PipelineOptions {
            cv: crate::stat_engine::CvOptions {
                folds: 5,
                grid_size: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let report =
            null_kappa_uniformity(&GaussianFeatureModel::standard(2), &omega, 40, 20, 1, &opts).unwrap();
        assert_eq!(report.counts[0].iter().sum::<usize>() + report.failed, 20);
        assert_eq!(report.counts[1].len(), 3);
    }
}
