//! `dlsim`: run decentralized-learning experiments, protocol comparisons,
//! and connectivity sweeps from TOML configs, writing plot-ready CSV plus a
//! JSON manifest per invocation. Log level comes from `RUST_LOG`.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit status for configuration problems (unreadable, unparsable, or
/// invalid configs); runtime failures exit 1.
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "dlsim", version, about = "Decentralized learning topology simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and write metrics.csv + per_node_final.csv.
    Run {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (0 = all cores). Results do not depend on this.
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Also write topology.csv with per-round edges (round, src, dst).
        #[arg(long, default_value_t = false)]
        dump_topology: bool,
    },
    /// Run every config in a directory across seeds and write summary.csv.
    Compare {
        /// Directory of experiment configs (*.toml).
        #[arg(long)]
        configs: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated seeds.
        #[arg(long, default_value = "1,2,3,4,5", value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Estimate connectivity probability over a (d_s, d_r) grid.
    Connectivity {
        /// Grid config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

/// Failures that indicate a bad configuration rather than a runtime fault.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult = Result<(), CliError>;

fn in_thread_pool<F: FnOnce() -> CliResult + Send>(threads: usize, f: F) -> CliResult {
    if threads == 0 {
        return f();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    pool.install(f)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            out,
            seed,
            threads,
            dump_topology,
        } => in_thread_pool(threads, || commands::run::execute(&config, &out, seed, dump_topology)),
        Command::Compare {
            configs,
            out,
            seeds,
            threads,
        } => in_thread_pool(threads, || commands::compare::execute(&configs, &out, &seeds)),
        Command::Connectivity { config, out, threads } => {
            in_thread_pool(threads, || commands::connectivity::execute(&config, &out))
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(message)) => {
            eprintln!("config error: {message}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Runtime(error)) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
