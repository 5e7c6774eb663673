use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod data;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "stcate", version, about = "Heterogeneous effects of spatio-temporal stochastic interventions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; all cores by default.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Published study size: 500 periods, 500 replications.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the log-linear Poisson propensity model.
    FitPropensity,
    /// Estimate the CATE, its variance bound and the heterogeneity test.
    Estimate,
    /// Run a Monte Carlo study.
    Simulate,
    /// Compute the Monte Carlo truth under a known DGP.
    Oracle,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config PATH is required"))?;
    if cli.threads == Some(0) {
        return Err(CliError::config("--threads must be at least 1"));
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(e.to_string()))?;
    }
    match cli.command {
        Command::FitPropensity => {
            let mut cfg = config::load_analysis(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            commands::fit::run(&cfg, &cli.out)
        }
        Command::Estimate => {
            let mut cfg = config::load_analysis(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            commands::estimate::run(&cfg, &cli.out)
        }
        Command::Simulate => {
            let mut cfg: config::SimulateConfig = config::parse(path, &config::read_text(path)?)?;
            if let Some(s) = cli.seed {
                cfg.experiment.master_seed = s;
            }
            if cli.paper_scale {
                commands::simulate::apply_full_scale(&mut cfg);
            }
            commands::simulate::run(&cfg, &cli.out, cli.threads)
        }
        Command::Oracle => {
            let mut cfg = config::load_oracle(path)?;
            if let Some(s) = cli.seed {
                cfg.master_seed = s;
            }
            commands::oracle::run(&cfg, &cli.out, cli.paper_scale)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
