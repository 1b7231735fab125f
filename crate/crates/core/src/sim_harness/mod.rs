//! Synthetic replicate study: violation rates of the wFDP bound and the
//! accuracy-versus-cost tradeoff, for the cost-aware procedure and for the
//! cost-unaware baseline that treats every feature as costing 2.
//!
//! Replicate `r` draws all of its randomness from stream `r` of the master
//! seed, so an experiment is a pure function of its config regardless of how
//! replicates are scheduled across threads.

mod semisynthetic;
mod uniformity;

pub use semisynthetic::{ar1_covariance, logistic_mle, run_semi_synthetic, SemiSyntheticConfig, SemiSyntheticReport, DEFAULT_COSTS};
pub use uniformity::{chi_square_uniform, null_kappa_uniformity, null_kappa_uniformity_with_plan, UniformityReport};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff_gen::{CostVector, GaussianFeatureModel};
use crate::linalg::{ols_with_intercept, standard_normal_matrix};
use crate::path_select::{true_wfdp, violation_indicator, BoundParams, WfdpCurve};
use crate::pipeline::{self, PipelineOptions};
use crate::rng::stream;
use crate::stat_engine::{CvOptions, Dataset, Family};

/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `ω_j − 1` knockoffs per feature and the cost-aware bound.
    #[default]
    Cheap,
    /// `ω ≡ 2` for construction and bound; real costs only for the oracle wFDP.
    BaselineOmega2,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Cheap => "cheap",
            Mode::BaselineOmega2 => "baseline-omega2",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cheap" => Ok(Mode::Cheap),
            "baseline-omega2" | "baseline" => Ok(Mode::BaselineOmega2),
            other => Err(Error::InvalidParameter(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseRule {
    /// `σ² = ‖Xβ‖² / (4n)`, recomputed per replicate.
    #[default]
    SnrScaled,
    FixedSigma(f64),
}

fn default_alpha() -> f64 {
    0.2
}
fn default_c() -> f64 {
    1.0
}
fn default_folds() -> usize {
    10
}
fn default_grid() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub noise_rule: NoiseRule,
    /// Probability that a null feature is expensive.
    pub gamma: f64,
    pub cost_expensive: u32,
    pub cost_cheap: u32,
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_c")]
    pub c: f64,
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_grid")]
    pub cv_grid: usize,
}

impl SimConfig {
    /// `n = 200`, `p = 30`, `β₁..₁₀ = 2`, relevant costs 6/2, null cost 6 with probability `γ`.
    pub fn standard(gamma: f64, seed: u64) -> Self {
        let mut beta = vec![0.0; 30];
        beta[..10].fill(2.0);
        Self {
            n: 200,
            p: 30,
            beta,
            noise_rule: NoiseRule::SnrScaled,
            gamma,
            cost_expensive: 6,
            cost_cheap: 2,
            reps: 100,
            alpha: 0.2,
            c: 1.0,
            seed,
            mode: Mode::Cheap,
            cv_folds: 10,
            cv_grid: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n < 1 || self.p < 1 || self.reps < 1 {
            return bad(format!("n, p and reps must be >= 1 (got {}, {}, {})", self.n, self.p, self.reps));
        }
        if self.beta.len() != self.p {
            return bad(format!("beta has {} entries, p is {}", self.beta.len(), self.p));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1]", self.gamma));
        }
        if self.cost_expensive < 2 || self.cost_cheap < 2 {
            return bad("costs must be integers >= 2".into());
        }
        if let NoiseRule::FixedSigma(s) = self.noise_rule {
            if !(s >= 0.0) {
                return bad(format!("fixed sigma {s} must be >= 0"));
            }
        }
        if self.n < 2 * self.cv_folds {
            return bad(format!("n = {} is too small for {} CV folds", self.n, self.cv_folds));
        }
        BoundParams::new(self.alpha, self.c).map(|_| ())
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            cv: CvOptions {
                folds: self.cv_folds,
                grid_size: self.cv_grid,
                ..CvOptions::default()
            },
            bound: BoundParams {
                alpha: self.alpha,
                c: self.c,
                h0_estimate: None,
            },
            ..PipelineOptions::default()
        }
    }
}

/// One synthetic training set with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub costs: CostVector,
    pub h0: Vec<bool>,
    pub noise_sd: f64,
}

/// Draws `X`, `y` and the per-replicate costs.
///
/// The first half (rounded down) of the relevant features, in index order,
/// cost `cost_expensive`; the rest cost `cost_cheap`. Each null feature is
/// expensive with probability `γ`.
pub fn generate_synthetic<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<SyntheticData> {
    config.validate()?;
    let x = standard_normal_matrix(config.n, config.p, rng);
    let beta = DVector::from_column_slice(&config.beta);
    let signal = &x * &beta;
    let variance = match config.noise_rule {
        NoiseRule::SnrScaled => signal.norm_squared() / (4.0 * config.n as f64),
        NoiseRule::FixedSigma(s) => s * s,
    };
    let noise_sd = if variance > 0.0 {
        variance.sqrt()
    } else {
        if config.noise_rule == NoiseRule::SnrScaled {
            log::warn!("zero signal: falling back to unit noise variance");
            1.0
        } else {
            0.0
        }
    };
    let eps = standard_normal_matrix(config.n, 1, rng);
    let y = signal + eps.column(0) * noise_sd;

    let h0: Vec<bool> = config.beta.iter().map(|&b| b == 0.0).collect();
    let relevant: Vec<usize> = (0..config.p).filter(|&j| !h0[j]).collect();
    let n_expensive = relevant.len() / 2;
    let mut omega = vec![config.cost_cheap; config.p];
    for &j in &relevant[..n_expensive] {
        omega[j] = config.cost_expensive;
    }
    for j in (0..config.p).filter(|&j| h0[j]) {
        let u: f64 = rng.random();
        if u < config.gamma {
            omega[j] = config.cost_expensive;
        }
    }
    Ok(SyntheticData {
        dataset: Dataset::new(x, y, Family::Gaussian)?,
        costs: CostVector::new(omega)?,
        h0,
        noise_sd,
    })
}

fn generate_test_set<R: Rng + ?Sized>(config: &SimConfig, noise_sd: f64, rng: &mut R) -> (DMatrix<f64>, DVector<f64>) {
    let x = standard_normal_matrix(config.n, config.p, rng);
    let eps = standard_normal_matrix(config.n, 1, rng);
    let y = &x * DVector::from_column_slice(&config.beta) + eps.column(0) * noise_sd;
    (x, y)
}

/// Everything recorded about one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    pub violation: bool,
    pub sup_ratio: f64,
    pub ubar: Vec<f64>,
    pub wfdp: Vec<f64>,
    pub ratio: Vec<f64>,
    /// `C(R_k)` under the real costs.
    pub cost: Vec<f64>,
    /// Test RMSE of least squares (with intercept) on `R_k`.
    pub rmse: Vec<f64>,
    pub sigma: Vec<usize>,
    pub kappa: Vec<u32>,
    pub costs: Vec<u32>,
    pub h0: Vec<bool>,
    pub lambda: f64,
    pub tie_events: usize,
}

/// Generates data for replicate `rep_index` and runs the full procedure.
pub fn run_replicate(config: &SimConfig, rep_index: usize) -> Result<ReplicateRecord> {
    let mut rng = stream(config.seed, rep_index as u64);
    let data = generate_synthetic(config, &mut rng)?;
    let (x_test, y_test) = generate_test_set(config, data.noise_sd, &mut rng);

    let procedure_costs = match config.mode {
        Mode::Cheap => data.costs.clone(),
        Mode::BaselineOmega2 => CostVector::uniform(config.p, 2)?,
    };
    let model = GaussianFeatureModel::standard(config.p);
    let out = pipeline::run(&data.dataset, &model, &procedure_costs, &config.pipeline_options(), &mut rng)?;

    let wfdp = true_wfdp(&out.path, &data.costs, &data.h0)?;
    let curve = WfdpCurve::new(out.ubar, Some(wfdp));
    let violation = violation_indicator(&curve)?;
    let ratio = curve.ratios().unwrap_or_default();

    let p = config.p;
    let mut cost = Vec::with_capacity(p);
    let mut rmse = Vec::with_capacity(p);
    let mut last: Option<(usize, f64)> = None;
    for k in 1..=p {
        let set = out.path.set(k);
        cost.push(data.costs.cost_of(set.iter().copied()) as f64);
        let err = match last {
            Some((size, err)) if size == set.len() => err,
            _ => test_rmse(&data.dataset.x, &data.dataset.y, &x_test, &y_test, &set),
        };
        last = Some((set.len(), err));
        rmse.push(err);
    }

    Ok(ReplicateRecord {
        rep: rep_index,
        violation,
        sup_ratio: curve.ratio_sup.unwrap_or(0.0),
        wfdp: curve.wfdp.clone().unwrap_or_default(),
        ubar: curve.ubar,
        ratio,
        cost,
        rmse,
        sigma: out.path.sigma.clone(),
        kappa: out.table.kappa.clone(),
        costs: data.costs.as_slice().to_vec(),
        h0: data.h0,
        lambda: out.table.lambda_used,
        tie_events: out.table.tie_events,
    })
}

fn test_rmse(x: &DMatrix<f64>, y: &DVector<f64>, x_test: &DMatrix<f64>, y_test: &DVector<f64>, set: &[usize]) -> f64 {
    let (b0, coef) = ols_with_intercept(x, y, set);
    let mut sq = 0.0;
    for i in 0..x_test.nrows() {
        let pred = b0 + set.iter().zip(coef.iter()).map(|(&j, &b)| b * x_test[(i, j)]).sum::<f64>();
        sq += (y_test[i] - pred).powi(2);
    }
    (sq / x_test.nrows() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub k: usize,
    pub mean_cost: f64,
    pub mean_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub mode: Mode,
    pub violation_rate: f64,
    pub per_rep: Vec<ReplicateRecord>,
    pub failed: Vec<FailedReplicate>,
    pub tradeoff: Vec<TradeoffPoint>,
}

/// Runs every replicate in parallel and aggregates in replicate order.
pub fn run_experiment(config: &SimConfig) -> Result<SimReport> {
    config.validate()?;
    let results: Vec<Result<ReplicateRecord>> = (0..config.reps)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect();
    let mut per_rep = Vec::with_capacity(config.reps);
    let mut failed = Vec::new();
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(rec) => per_rep.push(rec),
            Err(e) => {
                log::warn!("replicate {rep} failed: {e}");
                failed.push(FailedReplicate {
                    rep,
                    error: e.to_string(),
                });
            }
        }
    }
    if failed.len() as f64 > MAX_FAILURE_FRACTION * config.reps as f64 {
        return Err(Error::TooManyFailures {
            failed: failed.len(),
            total: config.reps,
        });
    }
    let violations = per_rep.iter().filter(|r| r.violation).count();
    let violation_rate = if per_rep.is_empty() {
        0.0
    } else {
        violations as f64 / per_rep.len() as f64
    };
    let tradeoff = tradeoff_from_records(&per_rep, config.p);
    Ok(SimReport {
        config: config.clone(),
        mode: config.mode,
        violation_rate,
        per_rep,
        failed,
        tradeoff,
    })
}

/// Mean over replicates of `(C(R_k), RMSE_k)` for each `k`.
pub fn rmse_vs_cost(report: &SimReport) -> Vec<TradeoffPoint> {
    tradeoff_from_records(&report.per_rep, report.config.p)
}

fn tradeoff_from_records(records: &[ReplicateRecord], p: usize) -> Vec<TradeoffPoint> {
    let m = records.len().max(1) as f64;
    (1..=p)
        .map(|k| TradeoffPoint {
            k,
            mean_cost: records.iter().map(|r| r.cost[k - 1]).sum::<f64>() / m,
            mean_rmse: records.iter().map(|r| r.rmse[k - 1]).sum::<f64>() / m,
        })
        .collect()
}

/// For null features, `(cost, times κ = 1, trials)` pooled per distinct cost.
pub fn null_selection_counts(report: &SimReport) -> Vec<(u32, usize, usize)> {
    let mut acc: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
    for rec in &report.per_rep {
        for j in 0..rec.costs.len() {
            if rec.h0[j] {
                let e = acc.entry(rec.costs[j]).or_default();
                e.0 += usize::from(rec.kappa[j] == 1);
                e.1 += 1;
            }
        }
    }
    acc.into_iter().map(|(w, (hits, n))| (w, hits, n)).collect()
}
