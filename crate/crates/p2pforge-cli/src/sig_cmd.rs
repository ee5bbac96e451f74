//! `sig` subcommands: fronting the signature registry.

use std::path::PathBuf;

use clap::Subcommand;
use p2pforge::signature::{self, SignatureRegistry};

use crate::{Cli, CliError, resolve_output};

#[derive(Subcommand)]
pub enum SigCommand {
    /// Check a signature document against every invariant.
    Validate { file: PathBuf },
    /// Print the canonical SHA-512 digest of a signature document.
    Digest { file: PathBuf },
    /// Merge a bundle into a registry file.
    Import {
        bundle: PathBuf,
        #[arg(long)]
        registry: PathBuf,
    },
    /// Export networks from a registry file as a bundle.
    Export {
        /// Network ids to export (every held version of each).
        ids: Vec<String>,
        #[arg(long)]
        registry: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

pub fn run(cli: &Cli, cmd: &SigCommand) -> Result<(), CliError> {
    match cmd {
        SigCommand::Validate { file } => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("read {}: {e}", file.display())))?;
            match signature::parse_signature(&text) {
                Ok(sig) => {
                    if !cli.quiet {
                        println!("valid: {} {}", sig.network_id, sig.version);
                    }
                    Ok(())
                }
                Err(e) => Err(CliError::Domain(format!("invalid signature: {e}"))),
            }
        }
        SigCommand::Digest { file } => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("read {}: {e}", file.display())))?;
            let sig = signature::parse_signature(&text)
                .map_err(|e| CliError::Domain(format!("invalid signature: {e}")))?;
            println!("{}", hex::encode(signature::digest(&sig)));
            Ok(())
        }
        SigCommand::Import { bundle, registry } => {
            let bytes = std::fs::read(bundle)
                .map_err(|e| CliError::Config(format!("read {}: {e}", bundle.display())))?;
            let mut reg = SignatureRegistry::load(registry)
                .map_err(|e| CliError::Config(format!("registry {}: {e}", registry.display())))?;
            let report = reg.import_bundle(&bytes);
            reg.save(registry)
                .map_err(|e| CliError::Runtime(format!("save registry: {e}")))?;
            if !cli.quiet {
                println!("{report}");
            }
            if report.issues.is_empty() {
                Ok(())
            } else {
                Err(CliError::Domain(format!(
                    "{} record(s) rejected",
                    report.issues.len()
                )))
            }
        }
        SigCommand::Export {
            ids,
            registry,
            output,
        } => {
            if ids.is_empty() {
                return Err(CliError::Config("no network ids given".into()));
            }
            let reg = SignatureRegistry::load(registry)
                .map_err(|e| CliError::Config(format!("registry {}: {e}", registry.display())))?;
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            let bundle = reg
                .export_bundle(&refs)
                .map_err(|e| CliError::Domain(e.to_string()))?;
            let out = resolve_output(&cli.output_dir, output);
            std::fs::write(&out, bundle)
                .map_err(|e| CliError::Runtime(format!("write {}: {e}", out.display())))?;
            if !cli.quiet {
                println!("exported {} network(s) to {}", ids.len(), out.display());
            }
            Ok(())
        }
    }
}
