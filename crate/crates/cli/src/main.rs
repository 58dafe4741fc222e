use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pmsutil_cli::commands;

/// Utility of post-market-surveillance sampling plans.
#[derive(Parser, Debug)]
#[command(name = "pmsutil", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the posterior and summarize every node.
    Infer {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory for draws.csv and summary.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Utility of named plans over the budget grid.
    Utility {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Re-sample the posterior for every simulated dataset (slow).
        #[arg(long)]
        oracle: bool,
    },
    /// Greedy allocations, baseline curves and budget savings.
    Plan {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        replications: usize,
    },
    /// Allocations and savings for each scenario of a parameter grid.
    Sensitivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Infer { data, config, out } => commands::cmd_infer(data, config, out),
        Command::Utility {
            data,
            config,
            plans,
            out,
            oracle,
        } => commands::cmd_utility(data, config, plans, out, *oracle),
        Command::Plan {
            data,
            config,
            out,
            replications,
        } => commands::cmd_plan(data, config, out, *replications),
        Command::Sensitivity {
            data,
            config,
            grid,
            out,
        } => commands::cmd_sensitivity(data, config, grid, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
