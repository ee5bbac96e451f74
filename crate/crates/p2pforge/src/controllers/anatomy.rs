//! Anatomy classification: who originates commands, and how widely.
//!
//! The client joins, settles into the overlay, and observes. Classification
//! is a pure function over the observation stream so the decision procedure
//! can be checked brute-force against raw message counts.

use std::collections::{BTreeMap, BTreeSet};

use super::report::{AnatomyReport, DegreeSummary, ObservedCnc, TopologyClass};
use super::{ControllerError, Transporter};
use crate::emulator::client::{ConnectOptions, EmulatedClient, Observation};
use crate::emulator::roles::CommandRoles;
use crate::evidence::SharedBag;
use crate::signature::NetworkSignature;
use crate::types::{Direction, Endpoint, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnatomyThresholds {
    /// Centralized: the top `centralized_max_origins` endpoints carry at
    /// least this share of command messages.
    pub centralized_share: f64,
    pub centralized_max_origins: usize,
    /// Decentralized: origins spread over at least this fraction of
    /// observed peers…
    pub decentralized_min_spread: f64,
    /// …with no single endpoint carrying more than this share.
    pub decentralized_max_share: f64,
    pub min_command_messages: usize,
}

impl Default for AnatomyThresholds {
    fn default() -> Self {
        AnatomyThresholds {
            centralized_share: 0.9,
            centralized_max_origins: 2,
            decentralized_min_spread: 0.25,
            decentralized_max_share: 0.2,
            min_command_messages: 50,
        }
    }
}

#[derive(Clone)]
pub struct AnatomyOptions {
    /// How long to observe, in signature time units.
    pub observe_duration: SimTime,
    pub seed: u64,
    pub thresholds: AnatomyThresholds,
    pub bag: Option<SharedBag>,
}

impl Default for AnatomyOptions {
    fn default() -> Self {
        AnatomyOptions {
            observe_duration: 600,
            seed: 0,
            thresholds: AnatomyThresholds::default(),
            bag: None,
        }
    }
}

/// Joins the network, observes for the configured window, classifies.
pub fn investigate_anatomy(
    net: &Transporter,
    sig: &NetworkSignature,
    opts: AnatomyOptions,
) -> Result<AnatomyReport, ControllerError> {
    let mut transport = net.open_transport()?;
    let mut client = EmulatedClient::connect(
        sig,
        transport.as_mut(),
        &net.hints(4),
        ConnectOptions {
            seed: opts.seed,
            ..ConnectOptions::default()
        },
    )?;
    if let Some(bag) = &opts.bag {
        client.attach_tap(Box::new(bag.clone()));
    }

    let unit = transport.ticks_per_unit().max(1);
    let snapshot_every = sig.timing.peer_exchange_interval.max(1) * unit;
    let mut snapshots = vec![client.peer_table().len()];
    let mut next_snapshot = transport.now() + snapshot_every;
    let horizon = transport.now() + opts.observe_duration * unit;
    let mut transports = vec![transport];
    while transports[0].now() < horizon {
        let t = net.step(&mut transports);
        client.service_tick(transports[0].as_mut(), t);
        if t >= next_snapshot {
            snapshots.push(client.peer_table().len());
            next_snapshot = t + snapshot_every;
        }
    }
    client.detach_tap();

    let observations = client.take_observations();
    let roles = CommandRoles::resolve(sig);
    let chunk_size = opts.bag.as_ref().map(|b| b.with(|bag| bag.chunk_size()));
    classify_anatomy(
        &observations,
        &snapshots,
        &roles,
        &opts.thresholds,
        chunk_size,
    )
}

/// The decision procedure, pure over an observation stream and peer-table
/// size snapshots.
pub fn classify_anatomy(
    observations: &[Observation],
    snapshots: &[usize],
    roles: &CommandRoles,
    thresholds: &AnatomyThresholds,
    chunk_size: Option<u32>,
) -> Result<AnatomyReport, ControllerError> {
    let command_msgs: Vec<&Observation> = observations
        .iter()
        .filter(|o| {
            o.direction == Direction::Inbound
                && o.message.as_ref().map(|m| m.opcode) == roles.command
        })
        .collect();
    if command_msgs.len() < thresholds.min_command_messages {
        return Err(ControllerError::InsufficientObservations {
            got: command_msgs.len(),
            need: thresholds.min_command_messages,
        });
    }

    let mut origins: BTreeMap<Endpoint, usize> = BTreeMap::new();
    for o in &command_msgs {
        *origins.entry(o.src).or_insert(0) += 1;
    }
    let total = command_msgs.len() as f64;
    let mut counts: Vec<usize> = origins.values().copied().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let top_share: f64 = counts
        .iter()
        .take(thresholds.centralized_max_origins)
        .sum::<usize>() as f64
        / total;
    let max_share = counts.first().copied().unwrap_or(0) as f64 / total;

    let observed_peers: BTreeSet<Endpoint> = observations
        .iter()
        .filter(|o| o.direction == Direction::Inbound)
        .map(|o| o.src)
        .collect();
    let spread = origins.len() as f64 / observed_peers.len().max(1) as f64;

    let topology_class = if top_share >= thresholds.centralized_share {
        TopologyClass::Centralized
    } else if spread >= thresholds.decentralized_min_spread
        && max_share <= thresholds.decentralized_max_share
    {
        TopologyClass::Decentralized
    } else {
        TopologyClass::Hybrid
    };

    // Pull iff every command arrived after we polled its origin.
    let cnc_style_observed = {
        let mut poll_history: BTreeMap<Endpoint, SimTime> = BTreeMap::new();
        let mut solicited = 0usize;
        let mut poll_cursor = observations.iter().peekable();
        let mut polls_before = |until: SimTime, history: &mut BTreeMap<Endpoint, SimTime>| {
            while let Some(o) = poll_cursor.peek() {
                if o.at > until {
                    break;
                }
                if o.direction == Direction::Outbound
                    && o.message.as_ref().map(|m| m.opcode) == roles.poll
                {
                    history.insert(o.dst, o.at);
                }
                poll_cursor.next();
            }
        };
        for cmd in &command_msgs {
            polls_before(cmd.at, &mut poll_history);
            if poll_history.contains_key(&cmd.src) {
                solicited += 1;
            }
        }
        if solicited == command_msgs.len() && solicited > 0 {
            ObservedCnc::Pull
        } else if solicited == 0 {
            ObservedCnc::Push
        } else {
            ObservedCnc::Unknown
        }
    };

    let degree_summary = {
        let mut sizes = snapshots.to_vec();
        if sizes.is_empty() {
            sizes.push(0);
        }
        sizes.sort_unstable();
        DegreeSummary {
            min: sizes[0],
            median: sizes[(sizes.len() - 1) / 2],
            max: sizes[sizes.len() - 1],
        }
    };

    let evidence_refs = match chunk_size {
        Some(cs) if cs > 0 => {
            let mut chunks = BTreeSet::new();
            for o in &command_msgs {
                if let Some(tap) = o.tap_ref {
                    let first = tap.offset / cs as u64;
                    let last = (tap.offset + tap.len.max(1) - 1) / cs as u64;
                    for c in first..=last {
                        chunks.insert(c as u32);
                    }
                }
            }
            chunks.into_iter().collect()
        }
        _ => Vec::new(),
    };

    Ok(AnatomyReport {
        topology_class,
        cnc_style_observed,
        degree_summary,
        evidence_refs,
    })
}
