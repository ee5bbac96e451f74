//! `sim` subcommands: run a world on its own and export the event log for
//! replay-oracle tooling.

use std::path::PathBuf;

use clap::Subcommand;
use p2pforge::signature::parse_signature;
use p2pforge::simnet::{SimConfig, SimWorld};

use crate::{Cli, CliError, resolve_output};

#[derive(Subcommand)]
pub enum SimCommand {
    /// Build a world from a config and run it to a target time.
    Run {
        /// SimConfig JSON file.
        #[arg(long)]
        config: PathBuf,
        /// Signature document the world speaks.
        #[arg(long)]
        sig: PathBuf,
        /// Run until this sim time.
        #[arg(long)]
        until: u64,
        /// Write the event log as TSV.
        #[arg(long)]
        export_log: Option<PathBuf>,
    },
}

pub fn run(cli: &Cli, cmd: &SimCommand) -> Result<(), CliError> {
    match cmd {
        SimCommand::Run {
            config,
            sig,
            until,
            export_log,
        } => {
            let raw = std::fs::read_to_string(config)
                .map_err(|e| CliError::Config(format!("read {}: {e}", config.display())))?;
            let mut sim_config: SimConfig = serde_json::from_str(&raw)
                .map_err(|e| CliError::Config(format!("sim config: {e}")))?;
            if let Some(seed) = cli.seed {
                sim_config.seed = seed;
            }
            let sig_text = std::fs::read_to_string(sig)
                .map_err(|e| CliError::Config(format!("read {}: {e}", sig.display())))?;
            let signature = parse_signature(&sig_text)
                .map_err(|e| CliError::Config(format!("signature: {e}")))?;

            let mut world = SimWorld::build(&sim_config, &signature)
                .map_err(|e| CliError::Config(e.to_string()))?;
            world
                .run_until(*until)
                .map_err(|e| CliError::Runtime(e.to_string()))?;

            let t = world.now();
            let live = world.oracle_live_set(t).len();
            let footprint = world.oracle_footprint_set(t).len();
            let endpoints: std::collections::BTreeSet<_> =
                world.oracle_ip_observations(t).into_iter().collect();
            let messages = world
                .event_log()
                .iter()
                .filter(|e| matches!(e.kind, p2pforge::simnet::EventKind::Msg { .. }))
                .count();
            if !cli.quiet {
                println!("ran to t={t}");
                println!("nodes: {}", world.nodes().len());
                println!("bots alive: {live}");
                println!("footprint: {footprint}");
                println!("unique endpoints observed: {}", endpoints.len());
                println!("messages exchanged: {messages}");
            }
            if let Some(path) = export_log {
                let out = resolve_output(&cli.output_dir, path);
                std::fs::write(&out, world.export_event_log())
                    .map_err(|e| CliError::Runtime(format!("write {}: {e}", out.display())))?;
                if !cli.quiet {
                    println!("event log: {}", out.display());
                }
            }
            Ok(())
        }
    }
}
