//! p2pforge command line: signature management, simulation runs,
//! investigations, and evidence-bag operations.
//!
//! Exit codes are a stable contract: 0 success, 1 domain failure
//! (validation or verification), 2 usage/config errors, 3 runtime errors.

mod bag_cmd;
mod investigate;
mod sig_cmd;
mod sim_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "p2pforge",
    version,
    about = "P2P overlay investigation framework"
)]
pub struct Cli {
    /// Overrides the seed in any config this command reads.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Suppress the human-readable summary on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Validate, digest, import, and export network signatures.
    #[command(subcommand)]
    Sig(sig_cmd::SigCommand),
    /// Build and run a simulated overlay directly.
    #[command(subcommand)]
    Sim(sim_cmd::SimCommand),
    /// Run an investigation described by a JSON config file.
    Investigate {
        /// Investigation config (JSON).
        config: PathBuf,
    },
    /// Verify, replay, and transfer evidence bags.
    #[command(subcommand)]
    Bag(bag_cmd::BagCommand),
}

/// Failure classes mapped onto the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Validation or verification failed — exit 1.
    Domain(String),
    /// Bad usage or config — exit 2.
    Config(String),
    /// The operation itself fell over — exit 3.
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

pub fn io_config<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Config(format!("{context}: {e}"))
}

/// Resolves a path against --output-dir when it is relative.
pub fn resolve_output(cli_dir: &Option<PathBuf>, path: &PathBuf) -> PathBuf {
    match cli_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.clone(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Sig(cmd) => sig_cmd::run(&cli, cmd),
        Command::Sim(cmd) => sim_cmd::run(&cli, cmd),
        Command::Investigate { config } => investigate::run(&cli, config),
        Command::Bag(cmd) => bag_cmd::run(&cli, cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("p2pforge: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
