//! `dci`: data-consistent inversion from the command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 bad config or input file,
//! 3 solver did not converge, 4 unreachable cell, 5 diagnostic out of range.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dci_core::Error;

#[derive(Parser)]
#[command(name = "dci", version, about = "Data-consistent inversion by reweighted empirical distribution functions")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "DCI_THREADS")]
    threads: Option<usize>,

    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Naive,
    BinningGrid,
    BinningKmeans,
    Density,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::BinningGrid => "binning-grid",
            Method::BinningKmeans => "binning-kmeans",
            Method::Density => "density",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve an inverse problem and write weights, push-forward table and metadata.
    Solve {
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the predictability diagnostic of the density method.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a convergence study over a grid of sample and bin counts.
    Convergence {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare every method on one shared sample set.
    Compare {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_UNREACHABLE: u8 = 4;
pub const EXIT_DIAGNOSTIC: u8 = 5;

/// Exit code for an error raised while loading inputs.
pub fn input_code(_: &Error) -> u8 {
    EXIT_CONFIG
}

/// Exit code for an error raised while computing.
pub fn run_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse { .. } | Error::EmptySamples | Error::RowMismatch { .. } => EXIT_CONFIG,
        Error::NotConverged { .. } => EXIT_NOT_CONVERGED,
        Error::UnreachableCell { .. } => EXIT_UNREACHABLE,
        Error::BaselineDiagnostic(_) => EXIT_DIAGNOSTIC,
        _ => EXIT_FAILURE,
    }
}

/// A failure with its exit code.
pub struct Failure {
    pub code: u8,
    pub error: Error,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot start {t} threads: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    }
    let result = match cli.command {
        Command::Solve { method, config, out } => commands::solve(method, &config, &out),
        Command::Diagnose { config } => commands::diagnose(&config),
        Command::Convergence { spec, out } => commands::convergence(&spec, &out),
        Command::Compare { spec, out } => commands::compare(&spec, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {error}");
            ExitCode::from(code)
        }
    }
}
