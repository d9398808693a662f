//! `ztube` command-line front end.

mod artifacts;
mod commands;
mod config;
mod svg;

use clap::{Parser, Subcommand};
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "ztube", version, about = "Scaled-zonotope tube MPC toolkit")]
pub struct Cli {
    /// Scenario file (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "ztube-out")]
    pub out: PathBuf,
    /// RNG seed, overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tube variant such as `elastic-phi-c`, overrides the config.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Chain length for the spring chain and the benchmark.
    #[arg(long, global = true)]
    pub ell: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Membership tolerance, overrides `tolerances.membership`.
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Robust positively invariant seed set; writes rpi.json.
    Rpi,
    /// Offline ingredients (certificates, terminal set, weights); writes offline.json.
    Terminal,
    /// One tube program at `x0`; writes solution.json, polygons.json and tube.svg.
    Solve,
    /// Closed-loop simulation; writes trace.csv, sim_summary.json and sim_polygons.json.
    Simulate,
    /// Domain-of-attraction estimate; writes doa.csv and doa.json.
    Doa,
    /// Runtime benchmark on the spring chain; writes bench.csv.
    Bench,
    /// Prints the program size table.
    Complexity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Rpi => "rpi",
            Command::Terminal => "terminal",
            Command::Solve => "solve",
            Command::Simulate => "simulate",
            Command::Doa => "doa",
            Command::Bench => "bench",
            Command::Complexity => "complexity",
        }
    }
}

/// Exit status classes.
#[derive(Debug)]
pub enum CliError {
    /// Bad input, missing prerequisite or I/O problem (exit 2).
    Usage(String),
    /// Infeasible program, unstable plant or unmet target (exit 1).
    Failed(String),
    /// Numerical solver failure (exit 3).
    Solver(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failed(m) | CliError::Solver(m) => f.write_str(m),
        }
    }
}

impl From<ztube::Error> for CliError {
    fn from(e: ztube::Error) -> Self {
        use ztube::Error as E;
        let msg = e.to_string();
        match e {
            E::Infeasible(_) | E::Unstable { .. } | E::IterationCap { .. } | E::Unavailable(_) => CliError::Failed(msg),
            E::Solver(_) => CliError::Solver(msg),
            E::Dimension { .. } | E::InvalidArgument(_) | E::Serde(_) | E::Io(_) => CliError::Usage(msg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ztube {}: {e}", cli.command.name());
            ExitCode::from(e.code())
        }
    }
}
