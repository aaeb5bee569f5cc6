//! `qsb`: command-line front end for the quadratic-cost Schrödinger bridge
//! solver.
//!
//! Exit codes: 0 success, 1 I/O failure or failed verification, 2 config or
//! usage error, 3 Sinkhorn did not converge.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qsb_core::Exec;

use crate::commands::Context;
use crate::config::LoadedConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "qsb", version, about = "Schrödinger bridges with quadratic state cost")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration (TOML). Required except for `verify`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory that receives run directories (overrides [output] directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Query time; repeat for several. Used by kernel, solve and analytic.
    #[arg(long = "t", global = true, allow_negative_numbers = true)]
    times: Vec<f64>,

    /// RNG seed for simulate (overrides [sde] seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 0 picks the number of cores.
    #[arg(long, global = true, env = "QSB_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the transition kernel at (x, x2) pairs read from a CSV.
    Kernel {
        /// CSV with header and columns x1..xn, x2_1..x2_n.
        #[arg(long)]
        points: PathBuf,
    },
    /// Run the dynamic Sinkhorn recursion and write a run directory.
    Solve,
    /// Simulate closed-loop sample paths from a previous solve.
    Simulate {
        /// Solve directory to use instead of the latest matching one.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Run the property suite and print a PASS/FAIL table.
    Verify {
        /// Scale every assembled kernel matrix by (1 + FACTOR).
        #[arg(long, value_name = "FACTOR", num_args = 0..=1, default_missing_value = "1e-3")]
        inject_fault: Option<f64>,
    },
    /// Closed-form φ̂ for constant and Gaussian initial data on the grid.
    Analytic,
}

/// Configure the rayon pool and pick the execution policy.
fn setup_threads(requested: Option<usize>) -> Result<(Exec, usize), CliError> {
    let n = requested.unwrap_or(0);
    #[cfg(feature = "parallel")]
    {
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| CliError::Config(format!("--threads {n}: {e}")))?;
        }
        let actual = rayon::current_num_threads();
        Ok((if actual > 1 { Exec::Parallel } else { Exec::Sequential }, actual))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if n > 1 {
            log::warn!("built without the `parallel` feature; ignoring --threads {n}");
        }
        Ok((Exec::Sequential, 1))
    }
}

fn load(path: Option<&PathBuf>) -> Result<LoadedConfig, CliError> {
    match path {
        Some(p) => LoadedConfig::read(p),
        None => Err(CliError::Config("--config is required for this subcommand".into())),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (exec, threads) = setup_threads(cli.threads)?;
    let ctx = Context { exec, threads, out: cli.out.clone(), times: cli.times.clone(), seed: cli.seed };
    match &cli.command {
        Command::Kernel { points } => commands::kernel(&load(cli.config.as_ref())?, &ctx, points),
        Command::Solve => commands::solve(&load(cli.config.as_ref())?, &ctx).map(drop),
        Command::Simulate { run } => commands::simulate(&load(cli.config.as_ref())?, &ctx, run.as_deref()).map(drop),
        Command::Verify { inject_fault } => {
            let cfg = match &cli.config {
                Some(p) => LoadedConfig::read(p)?,
                None => LoadedConfig::empty(),
            };
            verify::run(&cfg, exec, *inject_fault)
        }
        Command::Analytic => commands::analytic(&load(cli.config.as_ref())?, &ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        // Output piped into e.g. `head`.
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
