//! CSV and JSON writers. Output depends only on the values written, so reruns
//! with the same seed produce byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knockoff_gen::CostVector;
use crate::pipeline::PipelineOutput;
use crate::sim_harness::{Mode, SimReport, TradeoffPoint};

pub const PATH_HEADER: &str = "k,feature,omega,kappa,tau,selected,cost_k,ubar_k,wfdp_k";
pub const VIOLATIONS_HEADER: &str = "rep,flag,sup_ratio";
pub const TRADEOFF_HEADER: &str = "k,mean_cost,mean_rmse,mode";

/// One line of `path.csv`: position `k` of the ordering and the set `R_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub k: usize,
    pub feature: String,
    pub omega: u32,
    pub kappa: u32,
    pub tau: f64,
    pub selected: bool,
    pub cost_k: u64,
    pub ubar_k: f64,
    pub wfdp_k: Option<f64>,
}

/// `x1, …, xp`.
pub fn default_feature_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn path_rows(
    out: &PipelineOutput,
    omega: &CostVector,
    names: &[String],
    wfdp: Option<&[f64]>,
) -> Result<Vec<PathRow>> {
    let p = out.path.len();
    if names.len() != p || omega.len() != p || out.ubar.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "path of length {p} with {} names, {} costs, {} bounds",
            names.len(),
            omega.len(),
            out.ubar.len()
        )));
    }
    if let Some(w) = wfdp {
        if w.len() != p {
            return Err(Error::DimensionMismatch(format!("{} wFDP values for a path of length {p}", w.len())));
        }
    }
    Ok((0..p)
        .map(|i| {
            let j = out.path.sigma[i];
            PathRow {
                k: i + 1,
                feature: names[j].clone(),
                omega: omega.get(j),
                kappa: out.table.kappa[j],
                tau: out.table.tau[j],
                selected: out.path.selected[i],
                cost_k: out.path.cost[i],
                ubar_k: out.ubar[i],
                wfdp_k: wfdp.map(|w| w[i]),
            }
        })
        .collect())
}

pub fn write_path_csv(path: &Path, rows: &[PathRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(PATH_HEADER.split(','))?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

#[derive(Serialize)]
struct ViolationRow {
    rep: usize,
    flag: u8,
    sup_ratio: f64,
}

pub fn write_violations_csv(path: &Path, report: &SimReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if report.per_rep.is_empty() {
        w.write_record(VIOLATIONS_HEADER.split(','))?;
    }
    for rec in &report.per_rep {
        w.serialize(ViolationRow {
            rep: rec.rep,
            flag: u8::from(rec.violation),
            sup_ratio: rec.sup_ratio,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TradeoffRow<'a> {
    k: usize,
    mean_cost: f64,
    mean_rmse: f64,
    mode: &'a str,
}

/// Writes one or more tradeoff curves, each tagged with its mode.
pub fn write_tradeoff_csv(path: &Path, curves: &[(Mode, &[TradeoffPoint])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if curves.iter().all(|(_, c)| c.is_empty()) {
        w.write_record(TRADEOFF_HEADER.split(','))?;
    }
    for (mode, curve) in curves {
        for pt in curve.iter() {
            w.serialize(TradeoffRow {
                k: pt.k,
                mean_cost: pt.mean_cost,
                mean_rmse: pt.mean_rmse,
                mode: mode.as_str(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
