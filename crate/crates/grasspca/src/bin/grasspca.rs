use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grasspca::commands::{self, RunOptions};
use grasspca::{parse_config, CliError, Overrides};

/// Federated PCA anomaly detection.
#[derive(Parser)]
#[command(name = "grasspca", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Parallel {
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Split the training data into client files.
    Partition {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a consensus basis.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        k: Option<i64>,
        #[arg(long, allow_negative_numbers = true)]
        rho: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        eta: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        rounds: Option<i64>,
        #[arg(long, allow_negative_numbers = true)]
        local_iters: Option<i64>,
        #[arg(long, allow_negative_numbers = true)]
        sample_fraction: Option<f64>,
        /// fedpe or fedpg.
        #[arg(long)]
        algorithm: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Record elapsed seconds in the history (makes it non-reproducible).
        #[arg(long)]
        wall_time: bool,
        #[command(flatten)]
        parallel: Parallel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the test set with a trained basis.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// Choose the threshold on this fraction of the test set and report on the rest.
        #[arg(long, allow_negative_numbers = true)]
        holdout: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        parallel: Parallel,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a training history to CSV.
    Report {
        #[arg(long)]
        history: PathBuf,
        /// Fail if the Lagrangian rises by more than this after round 2.
        #[arg(long)]
        assert_monotone: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Partition { config, out } => {
            let cfg = parse_config(Some(&config), &Overrides::default())?;
            println!("{}", commands::cmd_partition(&cfg, &out)?);
        }
        Command::Train {
            config,
            k,
            rho,
            eta,
            rounds,
            local_iters,
            sample_fraction,
            algorithm,
            seed,
            wall_time,
            parallel,
            out,
        } => {
            let o = Overrides {
                k,
                rho,
                eta,
                rounds,
                local_iters,
                sample_fraction,
                algorithm,
                seed,
                ..Overrides::default()
            };
            let cfg = parse_config(Some(&config), &o)?;
            let opts = RunOptions {
                threads: parallel.threads,
                wall_time,
            };
            println!("{}", commands::cmd_train(&cfg, &out, opts)?);
        }
        Command::Evaluate {
            config,
            basis,
            holdout,
            seed,
            parallel,
            out,
        } => {
            let o = Overrides {
                holdout,
                seed,
                ..Overrides::default()
            };
            let cfg = parse_config(Some(&config), &o)?;
            let opts = RunOptions {
                threads: parallel.threads,
                wall_time: false,
            };
            let (_, row) = commands::cmd_evaluate(&cfg, &basis, &out, opts)?;
            println!("{row}");
        }
        Command::Report {
            history,
            assert_monotone,
            out,
        } => {
            println!("{}", commands::cmd_report(&history, &out, assert_monotone)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
