use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CostVector, GaussianFeatureModel, IndexMap};
use crate::error::{Error, Result};
use crate::linalg;

/// Bisection stops once the bracket is narrower than this fraction of its upper end.
const BISECTION_REL_WIDTH: f64 = 1e-6;

/// Joint covariance of originals and knockoffs in [`IndexMap`] order.
pub fn build_joint_covariance(
    model: &GaussianFeatureModel,
    omega: &CostVector,
    s: &[f64],
) -> Result<DMatrix<f64>> {
    let p = model.p();
    if omega.len() != p || s.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "model has {p} features, omega has {}, s has {}",
            omega.len(),
            s.len()
        )));
    }
    if let Some(j) = s.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("s[{j}] = {} must be finite and >= 0", s[j])));
    }
    let map = IndexMap::new(omega);
    let sigma = model.sigma();
    let w = map.width();
    let mut g = DMatrix::zeros(w, w);
    for j in 0..p {
        for l in 0..map.group_size(j) {
            let a = map.flat(j, l);
            for k in 0..p {
                for m in 0..map.group_size(k) {
                    let b = map.flat(k, m);
                    g[(a, b)] = if j == k && l != m {
                        sigma[(j, k)] - s[j]
                    } else {
                        sigma[(j, k)]
                    };
                }
            }
        }
    }
    Ok(g)
}

/// How a plan expects its randomness to be supplied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// Every sampling call receives its own seeded stream from the caller.
    #[default]
    CallerStream,
    /// The plan was used with one fixed master seed.
    Fixed { seed: u64 },
}

/// Precomputed conditional sampler for `knockoffs | X`.
///
/// Immutable after construction; share it freely across threads.
#[derive(Debug, Clone)]
pub struct KnockoffPlan {
    model: GaussianFeatureModel,
    omega: CostVector,
    s: Vec<f64>,
    index_map: IndexMap,
    joint_cov: DMatrix<f64>,
    /// `(W − p) × p`, maps centered X to the conditional knockoff mean.
    cond_gain: DMatrix<f64>,
    /// Lower-triangular factor of the conditional covariance.
    cond_chol: DMatrix<f64>,
    jitter: f64,
    pub seed_policy: SeedPolicy,
}

impl KnockoffPlan {
    pub fn model(&self) -> &GaussianFeatureModel {
        &self.model
    }

    pub fn omega(&self) -> &CostVector {
        &self.omega
    }

    pub fn s(&self) -> &[f64] {
        &self.s
    }

    pub fn index_map(&self) -> &IndexMap {
        &self.index_map
    }

    pub fn joint_cov(&self) -> &DMatrix<f64> {
        &self.joint_cov
    }

    pub fn cond_gain(&self) -> &DMatrix<f64> {
        &self.cond_gain
    }

    pub fn cond_chol(&self) -> &DMatrix<f64> {
        &self.cond_chol
    }

    /// Diagonal jitter that was needed to factor the conditional covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn to_document(&self) -> PlanDocument {
        let sigma = self.model.sigma();
        PlanDocument {
            omega: self.omega.as_slice().to_vec(),
            s: self.s.clone(),
            mean: self.model.mean().iter().copied().collect(),
            sigma: (0..sigma.nrows()).map(|i| sigma.row(i).iter().copied().collect()).collect(),
            seed_policy: self.seed_policy,
        }
    }

    /// Rebuilds the plan; `G` and the factors are recomputed, never read.
    pub fn from_document(doc: &PlanDocument) -> Result<Self> {
        let p = doc.mean.len();
        if doc.sigma.len() != p || doc.sigma.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch(format!("sigma must be {p}x{p}")));
        }
        let sigma = DMatrix::from_row_iterator(p, p, doc.sigma.iter().flatten().copied());
        let model = GaussianFeatureModel::new(DVector::from_vec(doc.mean.clone()), sigma)?;
        let omega = CostVector::new(doc.omega.clone())?;
        let mut plan = precompute_sampler(&model, &omega, &doc.s)?;
        plan.seed_policy = doc.seed_policy;
        Ok(plan)
    }

    /// Draws the `n × (W − p)` knockoff matrix for observed `x`.
    ///
    /// Row `i` is `mean + gain·(x_i − mean) + L·ξ_i` with `ξ_i` standard
    /// normal; columns follow the index map restricted to copies `ℓ ≥ 2`.
    pub fn sample_knockoffs<R: Rng + ?Sized>(&self, x: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
        let p = self.model.p();
        if x.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "X has {} columns, plan expects {p}",
                x.ncols()
            )));
        }
        let n = x.nrows();
        let k = self.index_map.n_knockoffs();
        let mean = self.model.mean();
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let noise = linalg::standard_normal_matrix(n, k, rng);
        let mut out = centered * self.cond_gain.transpose() + noise * self.cond_chol.transpose();
        for (mut col, j) in out.column_iter_mut().zip(self.index_map.knockoff_owners()) {
            col.add_scalar_mut(mean[j]);
        }
        Ok(out)
    }
}

/// Serialized form of a [`KnockoffPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDocument {
    pub omega: Vec<u32>,
    pub s: Vec<f64>,
    pub mean: Vec<f64>,
    /// Row-major.
    pub sigma: Vec<Vec<f64>>,
    pub seed_policy: SeedPolicy,
}

/// Factors the conditional law of the knockoffs given the originals.
pub fn precompute_sampler(
    model: &GaussianFeatureModel,
    omega: &CostVector,
    s: &[f64],
) -> Result<KnockoffPlan> {
    let joint_cov = build_joint_covariance(model, omega, s)?;
    let map = IndexMap::new(omega);
    let p = model.p();
    let k = map.n_knockoffs();
    let sigma = model.sigma();

    let (sigma_chol, _) = linalg::jittered_cholesky(sigma, sigma.trace())
        .ok_or_else(|| Error::Infeasible("feature covariance cannot be factorized".into()))?;

    let mut knock_idx = Vec::with_capacity(k);
    for j in 0..p {
        for l in 1..map.group_size(j) {
            knock_idx.push(map.flat(j, l));
        }
    }
    let orig_idx: Vec<usize> = (0..p).map(|j| map.flat(j, 0)).collect();

    // p × (W − p)
    let cross = DMatrix::from_fn(p, k, |r, c| joint_cov[(orig_idx[r], knock_idx[c])]);
    let knock_block = DMatrix::from_fn(k, k, |r, c| joint_cov[(knock_idx[r], knock_idx[c])]);

    let cond_gain = sigma_chol.solve(&cross).transpose();
    let half = sigma_chol
        .l()
        .solve_lower_triangular(&cross)
        .ok_or_else(|| Error::Infeasible("triangular solve failed".into()))?;
    let mut cond_cov = knock_block - half.tr_mul(&half);
    let sym = (&cond_cov + cond_cov.transpose()) * 0.5;
    cond_cov = sym;

    let (cond_chol, jitter) = linalg::jittered_cholesky(&cond_cov, joint_cov.trace())
        .map(|(c, eps)| (c.unpack(), eps))
        .ok_or_else(|| {
            Error::Infeasible(
                "conditional knockoff covariance is not positive semidefinite; choose s with select_s".into(),
            )
        })?;
    if jitter > 0.0 {
        log::debug!("conditional covariance needed diagonal jitter {jitter:.3e}");
    }

    Ok(KnockoffPlan {
        model: model.clone(),
        omega: omega.clone(),
        s: s.to_vec(),
        index_map: map,
        joint_cov,
        cond_gain,
        cond_chol,
        jitter,
        seed_policy: SeedPolicy::default(),
    })
}

/// Result of [`select_s`], including the bisection trace.
#[derive(Debug, Clone, Serialize)]
pub struct SSelection {
    pub s: Vec<f64>,
    /// Largest feasible scale for `s = γ·diag(Σ)` before the safety factor.
    pub gamma: f64,
    pub safety: f64,
    /// `(γ, feasible)` for every probe, in order.
    pub trace: Vec<(f64, bool)>,
}

/// Equicorrelated `s` scaled to the feasibility edge.
///
/// Searches `s = γ·diag(Σ)` for the largest `γ ∈ [0, 1]` at which
/// [`precompute_sampler`] succeeds, then returns `safety·γ·diag(Σ)`.
pub fn select_s(model: &GaussianFeatureModel, omega: &CostVector, safety: f64) -> Result<SSelection> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(Error::InvalidParameter(format!("safety {safety} must lie in (0, 1]")));
    }
    if omega.len() != model.p() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} features, omega has {}",
            model.p(),
            omega.len()
        )));
    }
    let d: Vec<f64> = model.sigma().diagonal().iter().copied().collect();
    // ω/(ω−1) > 1 for every ω ≥ 2, so the diagonal cap s_j ≤ Σ_jj always binds.
    let upper = omega
        .as_slice()
        .iter()
        .map(|&w| f64::from(w) / f64::from(w - 1))
        .fold(1.0_f64, f64::min);

    let mut trace = Vec::new();
    let mut probe = |gamma: f64| {
        let s: Vec<f64> = d.iter().map(|&v| gamma * v).collect();
        let ok = precompute_sampler(model, omega, &s).is_ok();
        trace.push((gamma, ok));
        ok
    };

    let gamma = if probe(upper) {
        upper
    } else if !probe(0.0) {
        return Err(Error::Infeasible(
            "no feasible s: feature covariance is singular beyond jitter tolerance".into(),
        ));
    } else {
        let (mut lo, mut hi) = (0.0, upper);
        while hi - lo > BISECTION_REL_WIDTH * hi {
            let mid = 0.5 * (lo + hi);
            if probe(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    log::debug!("select_s: gamma = {gamma} after {} probes", trace.len());

    Ok(SSelection {
        s: d.iter().map(|&v| safety * gamma * v).collect(),
        gamma,
        safety,
        trace,
    })
}

/// Concatenates originals and knockoffs into the `n × W` design in index-map order.
pub fn assemble_augmented(map: &IndexMap, x: &DMatrix<f64>, knockoffs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = map.n_features();
    if x.ncols() != p || knockoffs.ncols() != map.n_knockoffs() || x.nrows() != knockoffs.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, knockoffs {}x{}, expected {p} and {} columns",
            x.nrows(),
            x.ncols(),
            knockoffs.nrows(),
            knockoffs.ncols(),
            map.n_knockoffs()
        )));
    }
    let mut z = DMatrix::zeros(x.nrows(), map.width());
    for j in 0..p {
        z.set_column(map.flat(j, 0), &x.column(j));
        for l in 1..map.group_size(j) {
            z.set_column(map.flat(j, l), &knockoffs.column(map.knockoff_slot(j, l)));
        }
    }
    Ok(z)
}

/// Diagnostics for a knockoff plan.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PlanDiagnostics {
    /// Max entrywise `|Ĉov[X, knockoffs] − G|` over `n_mc` draws.
    pub cov_deviation: f64,
    /// Smallest eigenvalue of `G`.
    pub psd_margin: f64,
    /// Max entrywise change of `G` under random within-group permutations.
    pub swap_deviation: f64,
    pub n_mc: usize,
    pub permutations_checked: usize,
}

const SWAP_PERMUTATIONS: usize = 20;

pub fn validate_plan<R: Rng + ?Sized>(plan: &KnockoffPlan, n_mc: usize, rng: &mut R) -> Result<PlanDiagnostics> {
    let map = plan.index_map();
    let g = plan.joint_cov();

    let x = plan.model().sample(n_mc, rng)?;
    let knockoffs = plan.sample_knockoffs(&x, rng)?;
    let z = assemble_augmented(map, &x, &knockoffs)?;
    let means = DVector::from_iterator(z.ncols(), z.column_iter().map(|c| c.mean()));
    let emp = linalg::covariance_about(&z, &means);
    let cov_deviation = (emp - g).amax();

    let psd_margin = linalg::min_eigenvalue(g);

    let mut swap_deviation = 0.0_f64;
    for _ in 0..SWAP_PERMUTATIONS {
        let perm = random_group_permutation(map, rng);
        swap_deviation = swap_deviation.max(permutation_deviation(g, &perm));
    }

    Ok(PlanDiagnostics {
        cov_deviation,
        psd_margin,
        swap_deviation,
        n_mc,
        permutations_checked: SWAP_PERMUTATIONS,
    })
}

/// Flat permutation that shuffles copies within each feature group.
pub fn random_group_permutation<R: Rng + ?Sized>(map: &IndexMap, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..map.width()).collect();
    for j in 0..map.n_features() {
        perm[map.group(j)].shuffle(rng);
    }
    perm
}

pub(crate) fn permutation_deviation(g: &DMatrix<f64>, perm: &[usize]) -> f64 {
    let mut worst = 0.0_f64;
    for a in 0..perm.len() {
        for b in 0..perm.len() {
            worst = worst.max((g[(perm[a], perm[b])] - g[(a, b)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn costs(v: &[u32]) -> CostVector {
        CostVector::new(v.to_vec()).unwrap()
    }

    fn equicorrelated(p: usize, rho: f64) -> GaussianFeatureModel {
        let sigma = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
        GaussianFeatureModel::new(DVector::zeros(p), sigma).unwrap()
    }

    #[test]
    fn joint_cov_identity_two_groups() {
        let g = build_joint_covariance(&GaussianFeatureModel::standard(2), &costs(&[2, 2]), &[0.5, 0.5]).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.5, 0.0, 0.0, //
                0.5, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.5, //
                0.0, 0.0, 0.5, 1.0,
            ],
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn joint_cov_full_decorrelation() {
        let g = build_joint_covariance(&GaussianFeatureModel::standard(1), &costs(&[3]), &[1.0]).unwrap();
        assert_eq!(g, DMatrix::identity(3, 3));
    }

    #[test]
    fn joint_cov_cross_group_blocks_constant() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        let model = GaussianFeatureModel::new(DVector::zeros(2), sigma).unwrap();
        let g = build_joint_covariance(&model, &costs(&[2, 2]), &[0.2, 0.2]).unwrap();
        for a in 0..2 {
            for b in 2..4 {
                assert_eq!(g[(a, b)], 0.9);
                assert_eq!(g[(b, a)], 0.9);
            }
        }
    }

    #[test]
    fn joint_cov_rejects_bad_s() {
        let model = GaussianFeatureModel::standard(2);
        assert!(matches!(
            build_joint_covariance(&model, &costs(&[2, 2]), &[0.5, -0.1]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            build_joint_covariance(&model, &costs(&[2, 2]), &[0.5]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn select_s_identity_hits_the_cap() {
        let model = GaussianFeatureModel::standard(4);
        let sel = select_s(&model, &costs(&[2, 2, 2, 2]), 1.0).unwrap();
        assert_eq!(sel.gamma, 1.0);
        assert_eq!(sel.s, vec![1.0; 4]);
        let g = build_joint_covariance(&model, &costs(&[2, 2, 2, 2]), &sel.s).unwrap();
        assert!(linalg::min_eigenvalue(&g) > -1e-12);
    }

    #[test]
    fn select_s_safety_scales_result() {
        let model = GaussianFeatureModel::standard(1);
        let sel = select_s(&model, &costs(&[2]), 0.5).unwrap();
        assert_eq!(sel.s, vec![0.5 * sel.gamma]);
        let g = build_joint_covariance(&model, &costs(&[2]), &sel.s).unwrap();
        // eigenvalues of [[1, 0.5], [0.5, 1]] are 0.5 and 1.5
        assert_relative_eq!(linalg::min_eigenvalue(&g), 0.5, epsilon = 1e-12);
        assert!(!sel.trace.is_empty());
        assert!(select_s(&model, &costs(&[2]), 0.0).is_err());
        assert!(select_s(&model, &costs(&[2]), 1.5).is_err());
    }

    #[test]
    fn select_s_equicorrelated_rho_09() {
        let model = equicorrelated(5, 0.9);
        let omega = costs(&[2; 5]);
        let sel = select_s(&model, &omega, 1.0).unwrap();
        // For ω ≡ 2 the feasibility edge is s = 2·λ_min(Σ) = 0.2.
        assert_relative_eq!(sel.gamma, 0.2, max_relative = 1e-5);
        let g = build_joint_covariance(&model, &omega, &sel.s).unwrap();
        let min_eig = linalg::min_eigenvalue(&g);
        assert!(min_eig >= -1e-9, "smallest eigenvalue {min_eig}");
        assert!(precompute_sampler(&model, &omega, &sel.s).is_ok());
    }

    #[test]
    fn sampler_with_decorrelated_copies_has_zero_gain() {
        let model = GaussianFeatureModel::standard(3);
        let plan = precompute_sampler(&model, &costs(&[2, 4, 3]), &[1.0, 1.0, 1.0]).unwrap();
        assert!(plan.cond_gain().iter().all(|&v| v == 0.0));
        assert_eq!(plan.cond_chol(), &DMatrix::identity(6, 6));
        assert_eq!(plan.jitter(), 0.0);
    }

    #[test]
    fn sampler_one_feature_by_hand() {
        // knockoff | X = x ~ N((1 − s)x, 1 − (1 − s)²)
        let plan = precompute_sampler(&GaussianFeatureModel::standard(1), &costs(&[2]), &[0.5]).unwrap();
        assert_relative_eq!(plan.cond_gain()[(0, 0)], 0.5, epsilon = 1e-14);
        let var = plan.cond_chol()[(0, 0)].powi(2);
        assert_relative_eq!(var, 0.75, epsilon = 1e-14);
    }

    #[test]
    fn oversized_s_is_infeasible() {
        let model = GaussianFeatureModel::standard(2);
        let err = precompute_sampler(&model, &costs(&[3, 2]), &[3.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
    }

    #[test]
    fn zero_s_duplicates_originals() {
        let model = GaussianFeatureModel::standard(2);
        let plan = precompute_sampler(&model, &costs(&[2, 3]), &[0.0, 0.0]).unwrap();
        assert!(plan.jitter() <= 1e-10 * plan.joint_cov().trace());
        let x = DMatrix::from_row_slice(1, 2, &[0.7, -1.2]);
        let k = plan.sample_knockoffs(&x, &mut stream(3, 0)).unwrap();
        assert!((k[(0, 0)] - 0.7).abs() < 1e-3);
        assert!((k[(0, 1)] + 1.2).abs() < 1e-3);
        assert!((k[(0, 2)] + 1.2).abs() < 1e-3);
    }

    #[test]
    fn sampling_is_bit_reproducible() {
        let model = equicorrelated(3, 0.3);
        let omega = costs(&[2, 3, 2]);
        let sel = select_s(&model, &omega, 1.0).unwrap();
        let plan = precompute_sampler(&model, &omega, &sel.s).unwrap();
        let x = model.sample(20, &mut stream(1, 0)).unwrap();
        let a = plan.sample_knockoffs(&x, &mut stream(9, 4)).unwrap();
        let b = plan.sample_knockoffs(&x, &mut stream(9, 4)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
        let bad = DMatrix::zeros(4, 2);
        assert!(plan.sample_knockoffs(&bad, &mut stream(9, 4)).is_err());
    }

    #[test]
    fn nonzero_mean_is_carried_to_knockoffs() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let model = GaussianFeatureModel::new(DVector::from_vec(vec![5.0, -3.0]), sigma).unwrap();
        let omega = costs(&[3, 2]);
        let sel = select_s(&model, &omega, 1.0).unwrap();
        let plan = precompute_sampler(&model, &omega, &sel.s).unwrap();
        let mut rng = stream(2, 0);
        let x = model.sample(20_000, &mut rng).unwrap();
        let k = plan.sample_knockoffs(&x, &mut rng).unwrap();
        assert!((k.column(0).mean() - 5.0).abs() < 0.05);
        assert!((k.column(1).mean() - 5.0).abs() < 0.05);
        assert!((k.column(2).mean() + 3.0).abs() < 0.05);
    }

    #[test]
    fn document_round_trip_rebuilds_plan() {
        let model = equicorrelated(3, 0.4);
        let omega = costs(&[2, 5, 3]);
        let sel = select_s(&model, &omega, 0.9).unwrap();
        let mut plan = precompute_sampler(&model, &omega, &sel.s).unwrap();
        plan.seed_policy = SeedPolicy::Fixed { seed: 11 };
        let json = serde_json::to_string(&plan.to_document()).unwrap();
        assert!(!json.contains("joint_cov"));
        let doc: PlanDocument = serde_json::from_str(&json).unwrap();
        let rebuilt = KnockoffPlan::from_document(&doc).unwrap();
        assert_eq!(rebuilt.joint_cov(), plan.joint_cov());
        assert_eq!(rebuilt.s(), plan.s());
        assert_eq!(rebuilt.seed_policy, plan.seed_policy);
    }

    #[test]
    fn assembled_design_puts_originals_first_in_each_group() {
        let map = IndexMap::new(&costs(&[2, 3]));
        let x = DMatrix::from_row_slice(1, 2, &[10.0, 20.0]);
        let k = DMatrix::from_row_slice(1, 3, &[11.0, 21.0, 22.0]);
        let z = assemble_augmented(&map, &x, &k).unwrap();
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![10.0, 11.0, 20.0, 21.0, 22.0]);
    }
}
