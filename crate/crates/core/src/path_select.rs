//! Feature ordering, the nested selection path, and the simultaneous wFDP bound.
//!
//! With features ordered as `σ(1), …, σ(p)` the path is
//! `R_k = {σ(j) : j ≤ k, κ_{σ(j)} = 1}`, and for every `k`
//!
//! ```text
//! Ū(R_k, c) = (−log α) · (1 + c·#{j ≤ k : σ(j) ∉ R_k}) / (C(R_k) ∨ 1)
//!                      · max_{m ∈ M} ω_m / log(ω_m − (ω_m − 1)·α^c)
//! ```
//!
//! bounds `wFDP(R_k) = C(R_k ∩ H₀) / (C(R_k) ∨ 1)` simultaneously with
//! probability at least `1 − α`. `M` is every feature, or a caller-supplied
//! superset of the null set.
//!
//! The unselected count runs over the first `k` positions of the ordering, not
//! over raw feature indices `≤ k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff_gen::CostVector;

/// `σ`: features sorted by `τ` descending, then cost ascending, then index.
pub fn order_features(tau: &[f64], omega: &CostVector) -> Vec<usize> {
    let mut sigma: Vec<usize> = (0..tau.len()).collect();
    sigma.sort_by(|&a, &b| {
        tau[b]
            .total_cmp(&tau[a])
            .then(omega.get(a).cmp(&omega.get(b)))
            .then(a.cmp(&b))
    });
    sigma
}

/// The nested path `R_1 ⊆ R_2 ⊆ … ⊆ R_p`, stored as the ordering plus flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPath {
    /// Zero-based feature indices in path order.
    pub sigma: Vec<usize>,
    /// `selected[k]` is `κ_{σ(k)} = 1`.
    pub selected: Vec<bool>,
    /// `cost[k]` is `C(R_{k+1})` under the costs used to build the path.
    pub cost: Vec<u64>,
    /// `size[k]` is `|R_{k+1}|`.
    pub size: Vec<usize>,
}

impl SelectionPath {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// Members of `R_k` for one-based `k` (`k = 0` gives the empty set).
    pub fn set(&self, k: usize) -> Vec<usize> {
        self.sigma[..k.min(self.len())]
            .iter()
            .zip(&self.selected)
            .filter(|(_, &sel)| sel)
            .map(|(&j, _)| j)
            .collect()
    }

    /// Number of the first `k` ordered features that were not selected.
    pub fn unselected(&self, k: usize) -> usize {
        k - self.size[k - 1]
    }
}

pub fn build_path(sigma: &[usize], kappa: &[u32], omega: &CostVector) -> Result<SelectionPath> {
    let p = sigma.len();
    if kappa.len() != p || omega.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "sigma has {p} entries, kappa {}, omega {}",
            kappa.len(),
            omega.len()
        )));
    }
    let mut seen = vec![false; p];
    for &j in sigma {
        if j >= p || std::mem::replace(&mut seen[j], true) {
            return Err(Error::InvalidParameter("sigma is not a permutation".into()));
        }
    }
    let mut selected = Vec::with_capacity(p);
    let mut cost = Vec::with_capacity(p);
    let mut size = Vec::with_capacity(p);
    let (mut c, mut s) = (0u64, 0usize);
    for &j in sigma {
        let sel = kappa[j] == 1;
        if sel {
            c += u64::from(omega.get(j));
            s += 1;
        }
        selected.push(sel);
        cost.push(c);
        size.push(s);
    }
    Ok(SelectionPath {
        sigma: sigma.to_vec(),
        selected,
        cost,
        size,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub alpha: f64,
    pub c: f64,
    /// Zero-based features assumed to contain every null feature.
    pub h0_estimate: Option<Vec<usize>>,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            c: 1.0,
            h0_estimate: None,
        }
    }
}

impl BoundParams {
    pub fn new(alpha: f64, c: f64) -> Result<Self> {
        let params = Self {
            alpha,
            c,
            h0_estimate: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} must lie in (0, 1)", self.alpha)));
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return Err(Error::InvalidParameter(format!("c {} must be positive", self.c)));
        }
        Ok(())
    }
}

/// `ω / log(ω − (ω − 1)·α^c)` for one cost.
pub fn cost_factor(omega: u32, alpha: f64, c: f64) -> f64 {
    let w = f64::from(omega);
    w / (w - (w - 1.0) * alpha.powf(c)).ln()
}

/// `max_{m ∈ M} ω_m / log(ω_m − (ω_m − 1)·α^c)`.
pub fn max_cost_factor(omega: &CostVector, params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let all: Vec<usize>;
    let members: &[usize] = match &params.h0_estimate {
        Some(h) if !h.is_empty() => {
            if let Some(&bad) = h.iter().find(|&&j| j >= omega.len()) {
                return Err(Error::InvalidParameter(format!("null-set estimate names unknown feature {bad}")));
            }
            h
        }
        other => {
            if other.is_some() {
                log::warn!("empty null-set estimate; maximizing over all features");
            }
            all = (0..omega.len()).collect();
            &all
        }
    };
    Ok(members
        .iter()
        .map(|&m| cost_factor(omega.get(m), params.alpha, params.c))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `Ū(R_k, c)` for `k = 1..p`.
pub fn wfdp_bound(path: &SelectionPath, omega: &CostVector, params: &BoundParams) -> Result<Vec<f64>> {
    if omega.len() != path.len() {
        return Err(Error::DimensionMismatch(format!(
            "path has {} features, omega has {}",
            path.len(),
            omega.len()
        )));
    }
    let factor = max_cost_factor(omega, params)?;
    let neg_log_alpha = -params.alpha.ln();
    Ok((1..=path.len())
        .map(|k| {
            let unselected = path.unselected(k) as f64;
            let denom = (path.cost[k - 1] as f64).max(1.0);
            neg_log_alpha * (1.0 + params.c * unselected) / denom * factor
        })
        .collect())
}

/// Oracle `wFDP(R_k)` given the null set, costed with `omega`.
///
/// `omega` may differ from the costs that built the path (a cost-unaware run
/// is still charged real costs).
pub fn true_wfdp(path: &SelectionPath, omega: &CostVector, h0: &[bool]) -> Result<Vec<f64>> {
    if omega.len() != path.len() || h0.len() != path.len() {
        return Err(Error::DimensionMismatch(format!(
            "path has {} features, omega {}, h0 {}",
            path.len(),
            omega.len(),
            h0.len()
        )));
    }
    let (mut wasted, mut total) = (0u64, 0u64);
    Ok(path
        .sigma
        .iter()
        .zip(&path.selected)
        .map(|(&j, &sel)| {
            if sel {
                total += u64::from(omega.get(j));
                if h0[j] {
                    wasted += u64::from(omega.get(j));
                }
            }
            wasted as f64 / (total as f64).max(1.0)
        })
        .collect())
}

/// Bound curve with optional oracle values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WfdpCurve {
    pub ubar: Vec<f64>,
    pub wfdp: Option<Vec<f64>>,
    /// `sup_k wFDP(R_k) / Ū(R_k, c)` when the oracle is present.
    pub ratio_sup: Option<f64>,
}

impl WfdpCurve {
    pub fn new(ubar: Vec<f64>, wfdp: Option<Vec<f64>>) -> Self {
        let ratio_sup = wfdp.as_ref().map(|w| {
            w.iter()
                .zip(&ubar)
                .map(|(w, u)| w / u)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        Self { ubar, wfdp, ratio_sup }
    }

    pub fn ratios(&self) -> Option<Vec<f64>> {
        self.wfdp
            .as_ref()
            .map(|w| w.iter().zip(&self.ubar).map(|(w, u)| w / u).collect())
    }
}

/// True iff `wFDP(R_k) > Ū(R_k, c)` for some `k` (strict).
pub fn violation_indicator(curve: &WfdpCurve) -> Result<bool> {
    let wfdp = curve
        .wfdp
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("violation check needs oracle wFDP values".into()))?;
    Ok(wfdp.iter().zip(&curve.ubar).any(|(w, u)| w > u))
}
