//! Gaussian multiple knockoffs with per-feature multiplicity.
//!
//! Feature `j` gets `ω_j − 1` knockoff copies. The augmented vector
//! `(X_j^{(1)} = X_j, X_j^{(2)}, …, X_j^{(ω_j)})` is laid out feature-major,
//! copy-minor (see [`IndexMap`]), and its joint covariance is
//!
//! ```text
//! G[(j,ℓ),(k,m)] = Σ_jk − s_j · 1{j = k} · 1{ℓ ≠ m}
//! ```
//!
//! Knockoffs are drawn exactly from the conditional Gaussian law of the copies
//! given the observed originals, which makes the joint law invariant under any
//! permutation of the copies within a feature group.

mod plan;

pub use plan::{
    assemble_augmented, build_joint_covariance, precompute_sampler, random_group_permutation, select_s, validate_plan,
    KnockoffPlan, PlanDiagnostics, PlanDocument, SSelection, SeedPolicy,
};

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Integer feature costs, each at least 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct CostVector(Vec<u32>);

impl CostVector {
    pub fn new(omega: Vec<u32>) -> Result<Self> {
        if let Some((feature, &w)) = omega.iter().enumerate().find(|(_, &w)| w < 2) {
            return Err(Error::InvalidCost {
                feature,
                reason: format!("cost {w} is below the minimum of 2"),
            });
        }
        Ok(Self(omega))
    }

    /// Every feature at cost `w`.
    pub fn uniform(p: usize, w: u32) -> Result<Self> {
        Self::new(vec![w; p])
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, j: usize) -> u32 {
        self.0[j]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Width `W = Σ_j ω_j` of the augmented design.
    pub fn total(&self) -> usize {
        self.0.iter().map(|&w| w as usize).sum()
    }

    pub fn max(&self) -> u32 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Sum of costs over a set of features.
    pub fn cost_of<I: IntoIterator<Item = usize>>(&self, features: I) -> u64 {
        features.into_iter().map(|j| u64::from(self.0[j])).sum()
    }
}

impl TryFrom<Vec<u32>> for CostVector {
    type Error = Error;

    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CostVector> for Vec<u32> {
    fn from(c: CostVector) -> Self {
        c.0
    }
}

/// Bijection between `(feature, copy)` pairs and flat column indices.
///
/// Zero-based throughout: copy `0` is the original feature, copies
/// `1..ω_j` are its knockoffs. Group `j` occupies columns
/// `offset_j .. offset_j + ω_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexMap {
    offsets: Vec<usize>,
}

impl IndexMap {
    pub fn new(omega: &CostVector) -> Self {
        let mut offsets = Vec::with_capacity(omega.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &w in omega.as_slice() {
            acc += w as usize;
            offsets.push(acc);
        }
        Self { offsets }
    }

    pub fn n_features(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total augmented width `W`.
    pub fn width(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Number of knockoff columns `W − p`.
    pub fn n_knockoffs(&self) -> usize {
        self.width() - self.n_features()
    }

    pub fn group_size(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn group(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn flat(&self, j: usize, copy: usize) -> usize {
        debug_assert!(copy < self.group_size(j));
        self.offsets[j] + copy
    }

    /// Inverse of [`IndexMap::flat`].
    pub fn locate(&self, flat: usize) -> (usize, usize) {
        let j = self.offsets.partition_point(|&o| o <= flat) - 1;
        (j, flat - self.offsets[j])
    }

    /// Position of knockoff copy `copy ≥ 1` of feature `j` among the `W − p`
    /// knockoff-only columns, which keep the same feature-major order.
    pub fn knockoff_slot(&self, j: usize, copy: usize) -> usize {
        debug_assert!(copy >= 1 && copy < self.group_size(j));
        self.offsets[j] - j + copy - 1
    }

    /// Feature owning each knockoff-only column.
    pub fn knockoff_owners(&self) -> Vec<usize> {
        (0..self.n_features())
            .flat_map(|j| std::iter::repeat_n(j, self.group_size(j) - 1))
            .collect()
    }
}

/// `X ~ N(mean, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFeatureModel {
    mean: DVector<f64>,
    sigma: DMatrix<f64>,
}

impl GaussianFeatureModel {
    pub fn new(mean: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if sigma.nrows() != p || sigma.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {p} but sigma is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidModel("model has no features".into()));
        }
        if sigma.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entry".into()));
        }
        let scale = sigma.amax().max(f64::MIN_POSITIVE);
        if linalg::max_asymmetry(&sigma) > 1e-10 * scale {
            return Err(Error::InvalidModel("sigma is not symmetric".into()));
        }
        let trace = sigma.trace();
        let min_eig = linalg::min_eigenvalue(&sigma);
        if min_eig < -1e-8 * trace / p as f64 {
            return Err(Error::InvalidModel(format!(
                "sigma is not positive semidefinite (smallest eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { mean, sigma })
    }

    /// `N(0, I_p)`.
    pub fn standard(p: usize) -> Self {
        Self {
            mean: DVector::zeros(p),
            sigma: DMatrix::identity(p, p),
        }
    }

    pub fn p(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `n` iid rows from the model.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let p = self.p();
        let (chol, _) = linalg::jittered_cholesky(&self.sigma, self.sigma.trace())
            .ok_or_else(|| Error::InvalidModel("sigma cannot be factorized".into()))?;
        let z = linalg::standard_normal_matrix(n, p, rng);
        let mut x = z * chol.l().transpose();
        for (j, mut col) in x.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mean[j]);
        }
        Ok(x)
    }
}
