//! `bag` subcommands: verify, replay, transfer.

use std::path::PathBuf;

use clap::Subcommand;
use p2pforge::evidence::{self, FileSink, TransferError};
use p2pforge::signature::parse_signature;

use crate::{Cli, CliError, resolve_output};

#[derive(Subcommand)]
pub enum BagCommand {
    /// Recompute every chunk hash and the bag hash.
    Verify { file: PathBuf },
    /// Print one line per captured packet, oldest first.
    Replay {
        file: PathBuf,
        /// Decode payloads against this signature document.
        #[arg(long)]
        sig: Option<PathBuf>,
    },
    /// Stream the bag to a destination file through the verified transfer
    /// protocol.
    Transfer {
        file: PathBuf,
        #[arg(long)]
        to: PathBuf,
    },
}

pub fn run(cli: &Cli, cmd: &BagCommand) -> Result<(), CliError> {
    match cmd {
        BagCommand::Verify { file } => {
            let bytes = std::fs::read(file)
                .map_err(|e| CliError::Config(format!("read {}: {e}", file.display())))?;
            let report = evidence::verify_bytes(&bytes)
                .map_err(|e| CliError::Domain(format!("{}: {e}", file.display())))?;
            if !cli.quiet {
                for chunk in &report.chunks {
                    match &chunk.failure {
                        None => println!("chunk {}: ok", chunk.chunk_no),
                        Some(f) => println!("chunk {}: FAIL ({f:?})", chunk.chunk_no),
                    }
                }
                println!(
                    "bag hash: {}",
                    if report.bag_hash_ok { "ok" } else { "FAIL" }
                );
                println!("overall: {}", if report.pass { "pass" } else { "FAIL" });
            }
            if report.pass {
                Ok(())
            } else {
                let failing: Vec<String> = report
                    .chunks
                    .iter()
                    .filter(|c| !c.ok)
                    .map(|c| c.chunk_no.to_string())
                    .collect();
                Err(CliError::Domain(format!(
                    "verification failed (chunks: {})",
                    if failing.is_empty() {
                        "bag hash".to_string()
                    } else {
                        failing.join(", ")
                    }
                )))
            }
        }
        BagCommand::Replay { file, sig } => {
            let bytes = std::fs::read(file)
                .map_err(|e| CliError::Config(format!("read {}: {e}", file.display())))?;
            let signature = match sig {
                Some(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Config(format!("read {}: {e}", path.display())))?;
                    Some(
                        parse_signature(&text)
                            .map_err(|e| CliError::Config(format!("signature: {e}")))?,
                    )
                }
                None => None,
            };
            let items = evidence::replay(&bytes, signature.as_ref())
                .map_err(|e| CliError::Domain(e.to_string()))?;
            let stdout = std::io::stdout();
            let mut out = std::io::BufWriter::new(stdout.lock());
            for item in &items {
                let what = match (&item.decoded, &signature) {
                    (Some(msg), Some(s)) => s
                        .command(msg.opcode)
                        .map(|c| c.name.clone())
                        .unwrap_or_else(|| format!("op 0x{:02x}", msg.opcode)),
                    _ => "raw".to_string(),
                };
                let line = format!(
                    "{} {} {:?} {} -> {} {} bytes {}",
                    item.seq,
                    item.timestamp,
                    item.direction,
                    item.src,
                    item.dst,
                    item.payload.len(),
                    what
                );
                // a closed pipe downstream ends the stream, not the program
                use std::io::Write;
                if writeln!(out, "{line}").is_err() {
                    return Ok(());
                }
            }
            let _ = {
                use std::io::Write;
                out.flush()
            };
            if !cli.quiet {
                eprintln!("{} packets replayed", items.len());
            }
            Ok(())
        }
        BagCommand::Transfer { file, to } => {
            let bytes = std::fs::read(file)
                .map_err(|e| CliError::Config(format!("read {}: {e}", file.display())))?;
            let dest = resolve_output(&cli.output_dir, to);
            let mut sink = FileSink::new(&dest);
            match evidence::transfer(&bytes, &mut sink) {
                Ok(log) => {
                    let received = std::fs::read(&dest).map_err(|e| {
                        CliError::Runtime(format!("reread {}: {e}", dest.display()))
                    })?;
                    let report = evidence::verify_bytes(&received)
                        .map_err(|e| CliError::Domain(format!("received bag: {e}")))?;
                    if !cli.quiet {
                        println!(
                            "transferred {} chunk(s) in {} attempt(s) to {}",
                            log.attempts
                                .iter()
                                .map(|a| a.chunk_no)
                                .collect::<std::collections::BTreeSet<_>>()
                                .len(),
                            log.attempts.len(),
                            dest.display()
                        );
                        println!(
                            "received bag verify: {}",
                            if report.pass { "pass" } else { "FAIL" }
                        );
                    }
                    if report.pass {
                        Ok(())
                    } else {
                        Err(CliError::Domain("received bag failed verification".into()))
                    }
                }
                Err(TransferError::RetryLimitExceeded { chunk_no, log }) => {
                    Err(CliError::Domain(format!(
                        "chunk {chunk_no} exhausted {} attempts",
                        log.attempts_for(chunk_no)
                    )))
                }
                Err(e) => Err(CliError::Runtime(e.to_string())),
            }
        }
    }
}
