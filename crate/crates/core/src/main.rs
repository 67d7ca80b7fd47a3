use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use convgp::harness::{run_experiment, with_jobs, Experiment};
use convgp::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    PriorMmd,
    Posterior,
    Angular,
    CltBound,
    Plot,
}

impl From<Command> for Experiment {
    fn from(c: Command) -> Self {
        match c {
            Command::PriorMmd => Experiment::PriorMmd,
            Command::Posterior => Experiment::Posterior,
            Command::Angular => Experiment::Angular,
            Command::CltBound => Experiment::CltBound,
            Command::Plot => Experiment::Plot,
        }
    }
}

/// Convolutional-network Gaussian-process experiments.
#[derive(Debug, Parser)]
#[command(name = "convgp", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; `CONVGP_JOBS` takes precedence.
    #[arg(long)]
    jobs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = match std::env::var("CONVGP_JOBS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("convgp: CONVGP_JOBS must be a non-negative integer, got `{v}`");
                return ExitCode::from(2);
            }
        },
        Err(_) => cli.jobs.unwrap_or(0),
    };
    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("convgp: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    let experiment = Experiment::from(cli.command);
    let result = with_jobs(jobs, || run_experiment(experiment, &text, &cli.out, cli.seed)).and_then(|r| r);
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            if summary.failed_cells > 0 {
                eprintln!("convgp: {} of {} cells failed", summary.failed_cells, summary.rows);
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e @ Error::Config(_)) => {
            eprintln!("convgp: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("convgp: {e}");
            ExitCode::from(1)
        }
    }
}
