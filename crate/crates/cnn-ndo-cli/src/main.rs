//! CLI runner for the CNN density-operator steady-state solver.
//!
//! Subcommands: `train`, `evaluate`, `exact`, `count-params`. All take a
//! TOML run configuration (`--config`); `--seed`, `--output`, and
//! `--init-from` override the corresponding config entries, `--threads`
//! bounds the worker pool.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric or convergence
//! failure, 4 size-guard violation, 1 other I/O failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{exit_code_for, require_config, Overrides};
use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "cnn-ndo",
    version,
    about = "Variational steady states of open quantum spin systems \
             with a convolutional density-operator ansatz"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Override the config seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Worker threads for sampling and estimation.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,

    /// Checkpoint to initialize from (train) or evaluate.
    #[arg(long = "init-from", global = true, value_name = "PATH")]
    init_from: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the ansatz toward the steady state and write artifacts.
    Train,
    /// Estimate observables of a trained checkpoint by sampling.
    Evaluate,
    /// Exact-diagonalization reference for the configured model.
    Exact,
    /// Print the parameter count of the configured architecture.
    CountParams,
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = (|| -> cnn_ndo::Result<()> {
        let cfg = RunConfig::load(require_config(&cli.config)?)?;
        let overrides = Overrides {
            seed: cli.seed,
            output: cli.output.clone(),
            init_from: cli.init_from.clone(),
            threads: cli.threads,
        };
        match cli.command {
            Command::Train => commands::cmd_train(&cfg, &overrides),
            Command::Evaluate => commands::cmd_evaluate(&cfg, &overrides),
            Command::Exact => commands::cmd_exact(&cfg, &overrides),
            Command::CountParams => commands::cmd_count_params(&cfg, &overrides),
        }
    })();

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
