use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use cheap_knockoffs::report;
use cheap_knockoffs::sim_harness::run_experiment;
use cheap_knockoffs::{Mode, SimConfig, SimReport};

use crate::{ensure_dir, input_error};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Cheap,
    BaselineOmega2,
    Both,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's replicate count.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

/// A [`SimConfig`] plus an optional list of `γ` values run in turn.
#[derive(Debug, Deserialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub sim: SimConfig,
    pub gamma_sweep: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SummaryRow {
    gamma: f64,
    mode: String,
    violation_rate: f64,
    reps_ok: usize,
    reps_failed: usize,
}

pub fn load_config(path: &std::path::Path) -> Result<ConfigFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| input_error(format!("bad config {}: {e}", path.display())))
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let file = load_config(&args.config)?;
    let mut base = file.sim;
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    if let Some(reps) = args.reps {
        base.reps = reps;
    }
    let modes = match args.mode {
        None => vec![base.mode],
        Some(ModeArg::Cheap) => vec![Mode::Cheap],
        Some(ModeArg::BaselineOmega2) => vec![Mode::BaselineOmega2],
        Some(ModeArg::Both) => vec![Mode::Cheap, Mode::BaselineOmega2],
    };
    let gammas = file.gamma_sweep.unwrap_or_else(|| vec![base.gamma]);
    if gammas.is_empty() {
        return Err(input_error("gamma_sweep is empty"));
    }
    for &gamma in &gammas {
        for &mode in &modes {
            SimConfig { gamma, mode, ..base.clone() }.validate()?;
        }
    }

    ensure_dir(&args.out)?;
    let mut summary = Vec::new();
    let mut table: Vec<(f64, Vec<f64>)> = Vec::new();
    for &gamma in &gammas {
        let dir = args.out.join(format!("gamma-{gamma}"));
        ensure_dir(&dir)?;
        let mut reports: Vec<SimReport> = Vec::new();
        for &mode in &modes {
            let cfg = SimConfig { gamma, mode, ..base.clone() };
            let rep = run_experiment(&cfg)?;
            report::write_json(&dir.join(format!("report-{mode}.json")), &rep)?;
            report::write_violations_csv(&dir.join(format!("violations-{mode}.csv")), &rep)?;
            summary.push(SummaryRow {
                gamma,
                mode: mode.to_string(),
                violation_rate: rep.violation_rate,
                reps_ok: rep.per_rep.len(),
                reps_failed: rep.failed.len(),
            });
            reports.push(rep);
        }
        let curves: Vec<(Mode, &[_])> = reports.iter().map(|r| (r.mode, r.tradeoff.as_slice())).collect();
        report::write_tradeoff_csv(&dir.join("tradeoff.csv"), &curves)?;
        table.push((gamma, reports.iter().map(|r| r.violation_rate).collect()));
    }

    let mut w = csv::Writer::from_path(args.out.join("summary.csv"))?;
    for row in &summary {
        w.serialize(row)?;
    }
    w.flush()?;

    print!("{:>6}", "gamma");
    for mode in &modes {
        print!("  {:>16}", mode.as_str());
    }
    println!();
    for (gamma, rates) in &table {
        print!("{gamma:>6}");
        for r in rates {
            print!("  {r:>16.2}");
        }
        println!();
    }
    Ok(())
}
