//! Takeover: issue a command as the botmaster would and measure how far it
//! carries. Simulated transport only — refusing real networks is a hard
//! gate, not a configuration default.

use super::report::TakeoverReport;
use super::{ControllerError, Transporter};
use crate::signature::{CncStyle, NetworkSignature};

pub fn takeover(
    net: &Transporter,
    sig: &NetworkSignature,
    command: &[u8],
    key: &[u8],
) -> Result<TakeoverReport, ControllerError> {
    let sim = match net {
        Transporter::Sim(sim) => sim,
        Transporter::Loopback { .. } => return Err(ControllerError::RealTransportRefused),
    };

    let reachable_oracle_count = sim.with(|w| match sig.cnc_style {
        CncStyle::Push => w.oracle_push_reachable().len(),
        CncStyle::Pull => w.oracle_live_set(w.now()).len(),
    });

    let injection = sim.with_mut(|w| w.inject_command(command, key, sig.cnc_style))?;

    // Enough time for every poll cycle and every forwarding hop to land.
    let slack = sim.with(|w| 2 * w.nodes().len() as u64) + 10;
    let poll_wait = match sig.cnc_style {
        CncStyle::Pull => sig.timing.command_poll_interval,
        CncStyle::Push => 0,
    };
    sim.run_until(injection.at + poll_wait + slack)?;

    let mut execution_times: Vec<u64> = sim.with(|w| {
        w.executions(injection.seq)
            .into_iter()
            .map(|(_, t)| t)
            .collect()
    });
    execution_times.sort_unstable();
    let executed_count = execution_times.len();

    let quorum = (reachable_oracle_count as f64 * 0.9).ceil() as usize;
    let latency_to_quorum = (quorum > 0 && executed_count >= quorum)
        .then(|| execution_times[quorum - 1] - injection.at);

    Ok(TakeoverReport {
        command_issued: hex::encode(command),
        executed_count,
        reachable_oracle_count,
        latency_to_quorum,
    })
}
