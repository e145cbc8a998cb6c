use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{EstimateArgs, Failure, Globals};

/// Functional regression with measurement-error correction.
#[derive(Debug, Parser)]
#[command(name = "fmeasure", version)]
struct Cli {
    /// Run configuration ([scenario], [solver], [selection], [io] sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file; overrides [io] out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed; overrides [scenario] seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo replications.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run Monte Carlo scenarios and write a results table.
    Simulate {
        /// Also write the first replication's dataset of each scenario here.
        #[arg(long)]
        dump_data: Option<PathBuf>,
    },
    /// Fit naive and corrected models to a dataset.
    Estimate {
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        replicates: Option<PathBuf>,
        #[arg(long)]
        response: Option<PathBuf>,
        /// Diagnostics report; defaults to <out>.diagnostics.txt.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Export the eigen-decomposition of the replicate error covariance.
    Basis {
        #[arg(long)]
        replicates: Option<PathBuf>,
    },
    /// Contaminate clean curves with simulated error and compare fits.
    Inject {
        #[arg(long)]
        curves: Option<PathBuf>,
        #[arg(long)]
        response: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Internal(format!("cannot start thread pool: {e}")))?;
    }
    let g = Globals {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Simulate { dump_data } => commands::simulate(&g, dump_data.as_deref()),
        Command::Estimate {
            curves,
            replicates,
            response,
            diagnostics,
        } => commands::estimate(
            &g,
            &EstimateArgs {
                curves,
                replicates,
                response,
                diagnostics,
            },
        ),
        Command::Basis { replicates } => commands::basis(&g, replicates.as_deref()),
        Command::Inject { curves, response } => commands::inject(&g, curves.as_deref(), response.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
