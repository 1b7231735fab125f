use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use cheap_knockoffs::pipeline::{self, PipelineOptions};
use cheap_knockoffs::report::{self, path_rows, write_path_csv};
use cheap_knockoffs::rng::stream;
use cheap_knockoffs::{BoundParams, CostVector, Dataset, Family, GaussianFeatureModel, WfdpCurve};

use crate::input::{parse_list, read_costs, read_matrix, read_table, shrunk_covariance};
use crate::{ensure_dir, input_error, BoundArgs};

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Headed CSV holding the feature columns and the response column.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long)]
    pub response: String,
    #[arg(long, default_value = "gaussian")]
    pub family: Family,
    /// CSV with header `feature,omega`.
    #[arg(long, required_unless_present = "omega_override")]
    pub costs: Option<PathBuf>,
    /// Use this cost for every feature (2 gives the cost-unaware baseline).
    #[arg(long)]
    pub omega_override: Option<u32>,
    /// Multiply costs by this factor and round, clamping at 2.
    #[arg(long)]
    pub cost_scale: Option<f64>,
    /// Row-major CSV covariance of the features. Estimated from the data when absent.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    /// Diagonal shrinkage applied to an estimated covariance.
    #[arg(long, default_value_t = 0.1)]
    pub shrinkage: f64,
    #[command(flatten)]
    pub bound: BoundArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated path positions to report (default: every position).
    #[arg(long)]
    pub at_k: Option<String>,
    /// Comma-separated feature names forming a superset of the nulls.
    #[arg(long)]
    pub h0: Option<String>,
    /// Fixed penalty instead of cross-validation.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Selection {
    k: usize,
    features: Vec<String>,
    cost: u64,
    ubar: f64,
}

#[derive(Serialize)]
struct Summary {
    family: Family,
    n: usize,
    p: usize,
    alpha: f64,
    c: f64,
    seed: u64,
    lambda: f64,
    tie_events: usize,
    features: Vec<String>,
    costs: Vec<u32>,
    s: Vec<f64>,
    covariance_source: &'static str,
    shrinkage: Option<f64>,
    warnings: Vec<String>,
    selections: Vec<Selection>,
}

pub fn run(args: SelectArgs) -> Result<()> {
    let table = read_table(&args.data, &args.response)?;
    let p = table.features.len();
    let omega = match (args.omega_override, &args.costs) {
        (Some(w), _) => CostVector::uniform(p, w)?,
        (None, Some(path)) => CostVector::new(read_costs(path, &table.features, args.cost_scale)?)?,
        (None, None) => return Err(input_error("either --costs or --omega-override is required")),
    };

    let mut warnings = Vec::new();
    let (model, source, shrinkage) = match &args.sigma {
        Some(path) => {
            let sigma = read_matrix(path, p)?;
            let (mean, _) = shrunk_covariance(&table.x, 0.0);
            (GaussianFeatureModel::new(mean, sigma)?, "file", None)
        }
        None => {
            if !(0.0..=1.0).contains(&args.shrinkage) {
                return Err(input_error(format!("--shrinkage {} must lie in [0, 1]", args.shrinkage)));
            }
            let (mean, sigma) = shrunk_covariance(&table.x, args.shrinkage);
            let msg = "feature covariance estimated from the data; the wFDP bound assumes a known covariance";
            log::warn!("{msg}");
            warnings.push(msg.to_string());
            (GaussianFeatureModel::new(mean, sigma)?, "empirical", Some(args.shrinkage))
        }
    };

    let h0_estimate = match &args.h0 {
        None => None,
        Some(list) => Some(
            parse_list::<String>(list, "--h0")?
                .iter()
                .map(|name| {
                    table
                        .features
                        .iter()
                        .position(|f| f == name)
                        .ok_or_else(|| input_error(format!("--h0: unknown feature '{name}'")))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let bound = BoundParams {
        alpha: args.bound.alpha,
        c: args.bound.c,
        h0_estimate,
    };
    bound.validate()?;
    let opts = PipelineOptions {
        bound,
        fixed_lambda: args.lambda,
        ..PipelineOptions::default()
    };

    let ks: Vec<usize> = match &args.at_k {
        Some(list) => parse_list(list, "--at-k")?,
        None => (1..=p).collect(),
    };
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > p) {
        return Err(input_error(format!("--at-k {k} is outside 1..={p}")));
    }

    let n = table.y.len();
    let data = Dataset::new(table.x, table.y, args.family)?;
    let out = pipeline::run(&data, &model, &omega, &opts, &mut stream(args.seed, 0))?;

    ensure_dir(&args.out)?;
    let rows = path_rows(&out, &omega, &table.features, None)?;
    write_path_csv(&args.out.join("path.csv"), &rows).context("writing path.csv")?;
    report::write_json(&args.out.join("bound.json"), &WfdpCurve::new(out.ubar.clone(), None))?;
    report::write_json(&args.out.join("statistics.json"), &out.table)?;

    let selections: Vec<Selection> = ks
        .iter()
        .map(|&k| Selection {
            k,
            features: out.path.set(k).iter().map(|&j| table.features[j].clone()).collect(),
            cost: out.path.cost[k - 1],
            ubar: out.ubar[k - 1],
        })
        .collect();
    for s in &selections {
        println!(
            "k={:<3} cost={:<5} ubar={:<10.4} {{{}}}",
            s.k,
            s.cost,
            s.ubar,
            s.features.join(", ")
        );
    }
    let summary = Summary {
        family: args.family,
        n,
        p,
        alpha: opts.bound.alpha,
        c: opts.bound.c,
        seed: args.seed,
        lambda: out.table.lambda_used,
        tie_events: out.table.tie_events,
        features: table.features,
        costs: omega.as_slice().to_vec(),
        s: out.s.clone(),
        covariance_source: source,
        shrinkage,
        warnings,
        selections,
    };
    report::write_json(&args.out.join("summary.json"), &summary)?;
    Ok(())
}
