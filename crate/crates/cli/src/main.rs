//! `cvqkd`: key-rate curves, reports and Monte-Carlo estimation runs for
//! 1-to-N CV-QKD networks from a TOML scenario file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ScenarioConfig;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;

    pub fn io(message: impl Into<String>) -> Self {
        CliError { code: Self::IO, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: Self::CONFIG, message: message.into() }
    }
}

impl From<cvqkd::Error> for CliError {
    fn from(e: cvqkd::Error) -> Self {
        let code = match &e {
            e if e.is_numerical() => Self::NUMERICAL,
            cvqkd::Error::Io(_) | cvqkd::Error::Csv(_) | cvqkd::Error::Json(_) => Self::IO,
            _ => Self::CONFIG,
        };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "cvqkd", version, about = "Secret-key rates for multi-user CV-QKD broadcast networks")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct GlobalOpts {
    /// Scenario file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output file, or output directory for `montecarlo`. Overrides
    /// `run.output`; CSV goes to stdout when neither is set.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Omit the `# generated_unix` header line.
    #[arg(long, global = true)]
    pub no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Per-user rate decomposition and network totals for one scenario.
    Network,
    /// Rates over the distance and user-count grids.
    Sweep,
    /// Sample outcomes, reconstruct the covariance matrix and compare
    /// estimated rates with theory.
    Montecarlo {
        /// Reconstruct from the exact outcome covariance instead of samples.
        #[arg(long)]
        theory: bool,
    },
    /// Modulation variance maximising the total key rate.
    Optimize,
    /// Key rates converted to bits per second.
    Bps,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.global.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => return Err(CliError::config("--config PATH is required")),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(CliError::config("--jobs must be >= 1"));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    let opts = cli.global;
    pool.install(|| match cli.command {
        Command::Network => commands::network(&cfg, &opts),
        Command::Sweep => commands::sweep(&cfg, &opts),
        Command::Montecarlo { theory } => commands::montecarlo(&cfg, &opts, theory),
        Command::Optimize => commands::optimize(&cfg, &opts),
        Command::Bps => commands::bps(&cfg, &opts),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cvqkd: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_exit_codes() {
        let code = |e: cvqkd::Error| CliError::from(e).code;
        assert_eq!(code(cvqkd::Error::Unphysical("x".into())), 3);
        assert_eq!(code(cvqkd::Error::NumericDegeneracy("x".into())), 3);
        assert_eq!(code(cvqkd::Error::InvalidArgument("x".into())), 2);
        assert_eq!(code(cvqkd::Error::UnsupportedReduction("x".into())), 2);
        assert_eq!(code(cvqkd::Error::Io(std::io::Error::other("x"))), 1);
    }
}
