//! Wide-area enumeration: several concurrent clients crawl the overlay,
//! deduplicating what they find by node id. Amplification comes from
//! spreading a bounded per-round probe budget across clients; a stale-id
//! refresh keeps the liveness window measurable.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::report::EnumerationReport;
use super::{ControllerError, Transporter};
use crate::emulator::client::{ConnectOptions, EmulatedClient};
use crate::emulator::peer::PeerSource;
use crate::emulator::transport::Transport;
use crate::evidence::SharedBag;
use crate::signature::NetworkSignature;
use crate::types::{Endpoint, NodeId, SimTime};

/// When to call an enumeration done.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    /// Converged after this many consecutive rounds with zero new ids.
    pub quiescent_rounds: u32,
    pub max_rounds: Option<u32>,
    /// Keep crawling at least this long even when converged.
    pub min_duration: SimTime,
    pub max_duration: Option<SimTime>,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            quiescent_rounds: 5,
            max_rounds: None,
            min_duration: 0,
            max_duration: None,
        }
    }
}

#[derive(Clone)]
pub struct EnumerateOptions {
    pub n_clients: usize,
    pub stop: StopRule,
    /// Frontier probes per client per round.
    pub probe_budget: usize,
    pub seed: u64,
    pub bag: Option<SharedBag>,
    /// Emit a report after every round (footprint monotonicity checks).
    pub collect_interim: bool,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            n_clients: 1,
            stop: StopRule::default(),
            probe_budget: 16,
            seed: 0,
            bag: None,
            collect_interim: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnumerationOutcome {
    pub report: EnumerationReport,
    pub interim: Vec<EnumerationReport>,
}

struct Discovered {
    endpoints: BTreeSet<Endpoint>,
    last_endpoint: Endpoint,
    last_seen: SimTime,
    first_by: usize,
}

struct Crawl {
    discovered: BTreeMap<NodeId, Discovered>,
    frontier: VecDeque<Endpoint>,
    enqueued: BTreeSet<Endpoint>,
    own_ids: BTreeSet<NodeId>,
    own_endpoints: BTreeSet<Endpoint>,
}

impl Crawl {
    fn absorb_record(
        &mut self,
        client_idx: usize,
        id: NodeId,
        endpoint: Endpoint,
        seen: SimTime,
    ) -> bool {
        if self.own_ids.contains(&id) {
            return false;
        }
        let mut fresh = false;
        let entry = self.discovered.entry(id).or_insert_with(|| {
            fresh = true;
            Discovered {
                endpoints: BTreeSet::new(),
                last_endpoint: endpoint,
                last_seen: seen,
                first_by: client_idx,
            }
        });
        entry.endpoints.insert(endpoint);
        if seen >= entry.last_seen {
            entry.last_seen = seen;
            entry.last_endpoint = endpoint;
        }
        fresh
    }

    fn enqueue(&mut self, ep: Endpoint) {
        if !self.own_endpoints.contains(&ep) && self.enqueued.insert(ep) {
            self.frontier.push_back(ep);
        }
    }
}

/// Runs the enumeration investigation to its stop rule.
pub fn enumerate(
    net: &Transporter,
    sig: &NetworkSignature,
    opts: EnumerateOptions,
) -> Result<EnumerationOutcome, ControllerError> {
    if opts.n_clients == 0 {
        return Err(ControllerError::InvalidOptions("n_clients must be ≥ 1"));
    }
    if opts.probe_budget == 0 {
        return Err(ControllerError::InvalidOptions("probe_budget must be ≥ 1"));
    }

    let hints = net.hints(4);
    let mut clients: Vec<EmulatedClient> = Vec::new();
    let mut transports: Vec<Box<dyn Transport>> = Vec::new();
    let mut last_err = None;
    for i in 0..opts.n_clients {
        let mut transport = net.open_transport()?;
        let options = ConnectOptions {
            seed: opts.seed.wrapping_add(i as u64),
            auto_probe: false,
            ..ConnectOptions::default()
        };
        match EmulatedClient::connect(sig, transport.as_mut(), &hints, options) {
            Ok(mut client) => {
                if let Some(bag) = &opts.bag {
                    client.attach_tap(Box::new(bag.clone()));
                }
                clients.push(client);
                transports.push(transport);
            }
            Err(e) => last_err = Some(e),
        }
    }
    if clients.is_empty() {
        return Err(ControllerError::Bootstrap(
            last_err.expect("at least one attempt"),
        ));
    }

    let unit = transports[0].ticks_per_unit().max(1);
    let round_len = sig.timing.peer_exchange_interval.max(1) * unit;
    let liveness_window = 2 * sig.timing.ping_interval.max(1) * unit;
    let started = transports[0].now();

    let mut crawl = Crawl {
        discovered: BTreeMap::new(),
        frontier: VecDeque::new(),
        enqueued: BTreeSet::new(),
        own_ids: clients.iter().map(|c| c.self_id()).collect(),
        own_endpoints: clients.iter().map(|c| c.endpoint()).collect(),
    };
    // Whatever bootstrapping already surfaced seeds the frontier.
    for (i, client) in clients.iter_mut().enumerate() {
        for rec in client.take_discoveries() {
            crawl.absorb_record(i, rec.node_id, rec.endpoint, rec.last_seen);
            crawl.enqueue(rec.endpoint);
        }
        for ep in client.take_harvested_endpoints() {
            crawl.enqueue(ep);
        }
    }

    let mut interim = Vec::new();
    let mut rounds = 0u32;
    let mut quiet_rounds = 0u32;
    let mut converged = false;

    loop {
        rounds += 1;
        // Hand each client its slice of the frontier.
        for (i, client) in clients.iter_mut().enumerate() {
            for _ in 0..opts.probe_budget {
                let Some(ep) = crawl.frontier.pop_front() else {
                    break;
                };
                client.probe(transports[i].as_mut(), ep, PeerSource::PeerExchange);
                client.request_peers(transports[i].as_mut(), ep);
            }
        }
        // Refresh the stalest known ids so last_seen stays meaningful.
        let refresh_budget = (opts.probe_budget / 2).max(1);
        let mut stalest: Vec<(SimTime, NodeId, Endpoint)> = crawl
            .discovered
            .iter()
            .map(|(id, d)| (d.last_seen, *id, d.last_endpoint))
            .collect();
        stalest.sort();
        for (slot, (_, _, ep)) in stalest
            .iter()
            .take(refresh_budget * clients.len())
            .enumerate()
        {
            let i = slot % clients.len();
            clients[i].probe(transports[i].as_mut(), *ep, PeerSource::PeerExchange);
        }

        // Step one exchange round.
        let round_end = transports[0].now() + round_len;
        while transports[0].now() < round_end {
            let t = net.step(&mut transports);
            for (i, client) in clients.iter_mut().enumerate() {
                let now = if transports[i].is_simulated() {
                    t
                } else {
                    transports[i].now()
                };
                client.service_tick(transports[i].as_mut(), now);
            }
        }

        // Harvest.
        let mut new_ids = 0usize;
        for (i, client) in clients.iter_mut().enumerate() {
            for rec in client.take_discoveries() {
                if crawl.absorb_record(i, rec.node_id, rec.endpoint, rec.last_seen) {
                    new_ids += 1;
                }
                crawl.enqueue(rec.endpoint);
            }
            for ep in client.take_harvested_endpoints() {
                crawl.enqueue(ep);
            }
        }

        let now = transports[0].now();
        if opts.collect_interim {
            interim.push(build_report(
                &crawl,
                &clients,
                started,
                now,
                liveness_window,
                rounds,
                false,
            ));
        }

        if new_ids == 0 {
            quiet_rounds += 1;
        } else {
            quiet_rounds = 0;
        }
        let elapsed = now - started;
        if quiet_rounds >= opts.stop.quiescent_rounds && elapsed >= opts.stop.min_duration {
            converged = true;
            break;
        }
        if let Some(max) = opts.stop.max_rounds
            && rounds >= max
        {
            break;
        }
        if let Some(max) = opts.stop.max_duration
            && elapsed >= max
        {
            break;
        }
    }

    for client in &mut clients {
        client.detach_tap();
    }
    let ended = transports[0].now();
    let report = build_report(
        &crawl,
        &clients,
        started,
        ended,
        liveness_window,
        rounds,
        converged,
    );
    Ok(EnumerationOutcome { report, interim })
}

fn build_report(
    crawl: &Crawl,
    clients: &[EmulatedClient],
    started: SimTime,
    ended: SimTime,
    liveness_window: SimTime,
    rounds: u32,
    converged: bool,
) -> EnumerationReport {
    let footprint_ids: Vec<String> = crawl.discovered.keys().map(|id| id.to_hex()).collect();
    let live_estimate = crawl
        .discovered
        .values()
        .filter(|d| d.last_seen + liveness_window >= ended)
        .count();
    let unique_endpoints = crawl
        .discovered
        .values()
        .flat_map(|d| d.endpoints.iter())
        .collect::<BTreeSet<_>>()
        .len();
    let mut per_client = vec![0usize; clients.len()];
    for d in crawl.discovered.values() {
        per_client[d.first_by] += 1;
    }
    EnumerationReport {
        footprint_ids,
        live_estimate,
        unique_endpoints,
        per_client_contribution: per_client.into_iter().enumerate().collect(),
        started,
        ended,
        converged,
        rounds,
    }
}
