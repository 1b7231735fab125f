//! `cheapko`: cost-conscious knockoff selection on CSV data, simulation
//! studies, and knockoff-construction diagnostics.

mod input;
mod select;
mod simulate;
mod validate;

use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cheap_knockoffs::Error as CoreError;

#[derive(Parser)]
#[command(name = "cheapko", version, about = "Cost-conscious feature selection with multiple knockoffs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selection procedure on a CSV dataset.
    Select(select::SelectArgs),
    /// Run a synthetic replicate study from a TOML config.
    Simulate(simulate::SimulateArgs),
    /// Check a knockoff construction against its target covariance.
    ValidateKnockoffs(validate::ValidateArgs),
}

/// Bound parameters shared by `select` and `simulate`.
#[derive(Args, Clone, Debug)]
pub struct BoundArgs {
    /// Probability level of the simultaneous bound.
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    /// Weight on unselected features in the bound.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
}

/// Malformed user input (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(InputError(msg.into()))
}

pub fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| input_error(format!("cannot create {}: {e}", dir.display())))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Infeasible(_) => 3,
                CoreError::TooManyFailures { .. } | CoreError::NotConverged { .. } => 4,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Select(args) => select::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::ValidateKnockoffs(args) => validate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
