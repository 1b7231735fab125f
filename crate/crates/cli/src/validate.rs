use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use cheap_knockoffs::knockoff_gen::{precompute_sampler, validate_plan, PlanDiagnostics};
use cheap_knockoffs::pipeline::{build_plan, PipelineOptions};
use cheap_knockoffs::report;
use cheap_knockoffs::rng::stream;
use cheap_knockoffs::sim_harness::{null_kappa_uniformity_with_plan, UniformityReport};
use cheap_knockoffs::{CostVector, GaussianFeatureModel};

use crate::input::{parse_list, read_matrix};
use crate::{ensure_dir, input_error};

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Comma-separated costs, one per feature.
    #[arg(long)]
    pub omega: String,
    /// Row-major CSV covariance. Identity when absent.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo draws for the covariance check.
    #[arg(long, default_value_t = 50_000)]
    pub n_mc: usize,
    /// Comma-separated `s` used instead of the automatic choice.
    #[arg(long)]
    pub s_override: Option<String>,
    /// Replicates of the signal-free pipeline for the `κ` uniformity check.
    #[arg(long, default_value_t = 500)]
    pub null_reps: usize,
    /// Sample size of each signal-free replicate.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Directory for `plan.json` and `diagnostics.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Diagnostics {
    seed: u64,
    omega: Vec<u32>,
    s: Vec<f64>,
    plan: PlanDiagnostics,
    null_kappa: UniformityReport,
}

pub fn run(args: ValidateArgs) -> Result<()> {
    let omega = CostVector::new(parse_list(&args.omega, "--omega")?)?;
    let p = omega.len();
    let sigma = match &args.sigma {
        Some(path) => read_matrix(path, p)?,
        None => DMatrix::identity(p, p),
    };
    let model = GaussianFeatureModel::new(DVector::zeros(p), sigma)?;
    let plan = match &args.s_override {
        Some(list) => {
            let s: Vec<f64> = parse_list(list, "--s-override")?;
            if s.len() != p {
                return Err(input_error(format!("--s-override has {} values for {p} features", s.len())));
            }
            precompute_sampler(&model, &omega, &s)?
        }
        None => build_plan(&model, &omega, 1.0)?,
    };
    if args.n_mc < 2 {
        return Err(input_error("--n-mc must be at least 2"));
    }

    let diag = validate_plan(&plan, args.n_mc, &mut stream(args.seed, 0))?;
    let opts = PipelineOptions::default();
    let null = null_kappa_uniformity_with_plan(&plan, args.n, args.null_reps, args.seed.wrapping_add(1), &opts)?;

    println!("covariance deviation  {:.6}", diag.cov_deviation);
    println!("psd margin            {:.6e}", diag.psd_margin);
    println!("swap deviation        {:.3e}", diag.swap_deviation);
    println!("{:>7}  {:>5}  {:>10}  {:>8}  {:>10}  {:>8}", "feature", "omega", "P(kappa=1)", "1/omega", "chi2", "p-value");
    for j in 0..p {
        println!(
            "{:>7}  {:>5}  {:>10.4}  {:>8.4}  {:>10.3}  {:>8.4}",
            j + 1,
            omega.get(j),
            null.freq_original[j],
            1.0 / omega.get(j) as f64,
            null.chi_square[j],
            null.p_values[j]
        );
    }

    if let Some(dir) = &args.out {
        ensure_dir(dir)?;
        report::write_json(&dir.join("plan.json"), &plan.to_document())?;
        report::write_json(
            &dir.join("diagnostics.json"),
            &Diagnostics {
                seed: args.seed,
                omega: omega.as_slice().to_vec(),
                s: plan.s().to_vec(),
                plan: diag,
                null_kappa: null,
            },
        )?;
    }
    Ok(())
}
