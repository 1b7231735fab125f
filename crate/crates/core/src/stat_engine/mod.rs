//! Penalized fits on the augmented design and the per-feature statistics
//! `T_j^{(ℓ)}`, `κ_j` and `τ_j`.

mod cv;
mod lasso;

pub use cv::{cross_validate_lambda, lambda_max_per_obs, CvOptions, CvResult};
pub use lasso::{fit_lasso, fit_lasso_unchecked, LassoFit, LassoOptions, MAX_IRLS_STEPS, PROB_CLIP};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff_gen::{CostVector, IndexMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Gaussian,
    Binomial,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::InvalidParameter(format!("unknown family '{other}'"))),
        }
    }
}

/// Observed features and response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub family: Family,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, family: Family) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows, y has {}",
                x.nrows(),
                y.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::InvalidParameter("need at least 2 observations".into()));
        }
        if let Some(i) = x.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter(format!("row {i} of X has a non-finite value")));
        }
        match family {
            Family::Gaussian => {
                if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter(format!("response row {i} is not finite")));
                }
            }
            Family::Binomial => {
                if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "binomial response row {i} is {} (expected 0 or 1)",
                        y[i]
                    )));
                }
            }
        }
        Ok(Self { x, y, family })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Per-feature statistics. `kappa` is one-based: `κ_j = 1` means the
/// original column beat every knockoff copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticTable {
    /// `t[j][ℓ]`, zero-based copy index, copy 0 is the original.
    pub t: Vec<Vec<f64>>,
    pub kappa: Vec<u32>,
    pub tau: Vec<f64>,
    pub lambda_used: f64,
    /// Number of features whose argmax was decided by a random draw.
    pub tie_events: usize,
}

/// `t[j][ℓ] = |θ_{(j,ℓ)}|`; `kappa` and `tau` are left empty.
pub fn compute_statistics(theta: &DVector<f64>, omega: &CostVector, lambda_used: f64) -> Result<StatisticTable> {
    let map = IndexMap::new(omega);
    if theta.len() != map.width() {
        return Err(Error::DimensionMismatch(format!(
            "theta has length {}, augmented width is {}",
            theta.len(),
            map.width()
        )));
    }
    let t = (0..omega.len())
        .map(|j| map.group(j).map(|c| theta[c].abs()).collect())
        .collect();
    Ok(StatisticTable {
        t,
        kappa: Vec::new(),
        tau: Vec::new(),
        lambda_used,
        tie_events: 0,
    })
}

/// Fills `κ_j = argmax_ℓ T_j^{(ℓ)}` and `τ_j = 2ω_j⁻¹(T_j^{(κ_j)} − max_{ℓ≠κ_j} T_j^{(ℓ)})`.
///
/// Exactly tied maxima are broken uniformly at random. A lowest-index rule
/// would hand every all-zero group to the original column.
pub fn compute_kappa_tau<R: Rng + ?Sized>(mut table: StatisticTable, omega: &CostVector, rng: &mut R) -> Result<StatisticTable> {
    if table.t.len() != omega.len() {
        return Err(Error::DimensionMismatch(format!(
            "table has {} features, omega has {}",
            table.t.len(),
            omega.len()
        )));
    }
    let p = omega.len();
    table.kappa = Vec::with_capacity(p);
    table.tau = Vec::with_capacity(p);
    table.tie_events = 0;
    for (j, t) in table.t.iter().enumerate() {
        let w = omega.get(j) as usize;
        if t.len() != w {
            return Err(Error::DimensionMismatch(format!(
                "feature {j} has {} statistics but cost {w}",
                t.len()
            )));
        }
        let top = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<usize> = (0..w).filter(|&l| t[l] == top).collect();
        let winner = if tied.len() > 1 {
            table.tie_events += 1;
            tied[rng.random_range(0..tied.len())]
        } else {
            tied[0]
        };
        let runner_up = (0..w)
            .filter(|&l| l != winner)
            .map(|l| t[l])
            .fold(f64::NEG_INFINITY, f64::max);
        table.kappa.push(winner as u32 + 1);
        table.tau.push(2.0 / w as f64 * (top - runner_up));
    }
    Ok(table)
}
