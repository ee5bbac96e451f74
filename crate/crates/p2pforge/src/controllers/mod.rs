//! Standardized investigation controllers: enumeration, anatomy
//! classification, evidence collection, and takeover. Each drives one or
//! more emulated clients over a transport, writes findings into a report,
//! and optionally taps raw traffic into an evidence bag.

mod anatomy;
mod collect;
mod enumerate;
mod report;
mod takeover;

pub use anatomy::{AnatomyOptions, AnatomyThresholds, classify_anatomy, investigate_anatomy};
pub use collect::collect_evidence;
pub use enumerate::{EnumerateOptions, EnumerationOutcome, StopRule, enumerate};
pub use report::{
    AnatomyReport, DegreeSummary, EnumerationReport, ObservedCnc, REPORT_KEY, TakeoverReport,
    TopologyClass, render_report,
};
pub use takeover::takeover;

use thiserror::Error;

use crate::emulator::client::ConnectError;
use crate::emulator::transport::{SimTransport, Transport, TransportError, UdpTransport};
use crate::evidence::BagError;
use crate::simnet::{SimError, SimNetwork};
use crate::types::Endpoint;

/// Where an investigation runs: the simulated overlay or real loopback UDP.
pub enum Transporter {
    Sim(SimNetwork),
    Loopback { hints: Vec<Endpoint> },
}

impl Transporter {
    pub(crate) fn open_transport(&self) -> Result<Box<dyn Transport>, ControllerError> {
        match self {
            Transporter::Sim(net) => Ok(Box::new(SimTransport::attach(net))),
            Transporter::Loopback { .. } => Ok(Box::new(
                UdpTransport::bind().map_err(ControllerError::Transport)?,
            )),
        }
    }

    pub(crate) fn hints(&self, k: usize) -> Vec<Endpoint> {
        match self {
            Transporter::Sim(net) => net.entry_hints(k),
            Transporter::Loopback { hints } => hints.clone(),
        }
    }

    /// Moves shared time forward one tick. For the simulated transport the
    /// world steps once, regardless of how many clients ride on it.
    pub(crate) fn step(&self, transports: &mut [Box<dyn Transport>]) -> u64 {
        match self {
            Transporter::Sim(net) => net.step(),
            Transporter::Loopback { .. } => {
                transports.first_mut().map(|t| t.step()).unwrap_or_default()
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("no client joined the network: {0}")]
    Bootstrap(#[from] ConnectError),
    #[error("insufficient observations: {got} command messages, need {need}")]
    InsufficientObservations { got: usize, need: usize },
    #[error("takeover against a real transport is refused")]
    RealTransportRefused,
    #[error("invalid options: {0}")]
    InvalidOptions(&'static str),
    #[error(transparent)]
    Bag(#[from] BagError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}
