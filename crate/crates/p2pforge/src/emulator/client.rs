//! The emulated client: joins a network described by a signature and keeps
//! up appearances — answering pings and peer requests, exchanging peers,
//! polling where the protocol polls — so that to every other node it looks
//! like a regular member.
//!
//! Participation is Passive by default: inbound command payloads are
//! recorded but never forwarded. Conformant mode (full command
//! forwarding) is only accepted on the simulated transport.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::codec::{self, Message};
use super::peer::{PeerRecord, PeerSource, PeerTable};
use super::roles::{self, CommandRoles, Role};
use super::transport::{Transport, TransportError};
use crate::signature::{CncStyle, NetworkSignature};
use crate::types::{Direction, Endpoint, NodeId, SimTime};

/// Peers advertised per exchange reply.
const PEX_REPLY_MAX: usize = 16;
const PING_MISS_LIMIT: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Participation {
    Passive,
    Conformant,
}

/// Where an appended capture record landed inside an evidence bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapRef {
    pub seq: u64,
    pub offset: u64,
    pub len: u64,
}

/// Sink for raw traffic as the client sees it. Evidence bags implement this.
pub trait PacketTap {
    fn record(
        &mut self,
        at: SimTime,
        direction: Direction,
        src: Endpoint,
        dst: Endpoint,
        bytes: &[u8],
    ) -> Option<TapRef>;
}

/// One captured exchange, decoded when the signature allows it.
#[derive(Debug, Clone)]
pub struct Observation {
    pub at: SimTime,
    pub direction: Direction,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub bytes: Vec<u8>,
    pub message: Option<Message>,
    pub tap_ref: Option<TapRef>,
}

#[derive(Debug, Clone)]
pub struct ConnectOptions {
    pub seed: u64,
    pub participation: Participation,
    pub peer_table_bound: usize,
    /// Ping unknown endpoints learned from peers replies automatically.
    pub auto_probe: bool,
    pub attempts_per_hint: u32,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            seed: 0,
            participation: Participation::Passive,
            peer_table_bound: 64,
            auto_probe: true,
            attempts_per_hint: 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConnectError {
    #[error("bootstrap failed: no hint responded within {attempts} attempts per hint")]
    BootstrapFailed { attempts: u32 },
    #[error("conformant participation is only permitted on the simulated transport")]
    SignatureTransportMismatch,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub struct EmulatedClient {
    signature: NetworkSignature,
    roles: CommandRoles,
    self_id: NodeId,
    endpoint: Endpoint,
    participation: Participation,
    peer_table: PeerTable,
    rng: ChaCha8Rng,
    auto_probe: bool,
    time_unit: u64,
    next_ping: SimTime,
    next_pex: SimTime,
    next_poll: SimTime,
    ping_misses: BTreeMap<NodeId, u32>,
    probes: BTreeMap<Endpoint, PeerSource>,
    observations: Vec<Observation>,
    discoveries: Vec<PeerRecord>,
    harvested: Vec<Endpoint>,
    tap: Option<Box<dyn PacketTap>>,
}

impl EmulatedClient {
    /// Bootstraps into the network: announce presence, confirm liveness of
    /// entry hints, and request first peer lists.
    pub fn connect(
        signature: &NetworkSignature,
        transport: &mut dyn Transport,
        entry_hints: &[Endpoint],
        options: ConnectOptions,
    ) -> Result<EmulatedClient, ConnectError> {
        if options.participation == Participation::Conformant && !transport.is_simulated() {
            return Err(ConnectError::SignatureTransportMismatch);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed ^ 0x636c69656e74);
        let self_id = loop {
            let candidate = NodeId(rng.random());
            if !transport.knows_node_id(candidate) {
                break candidate;
            }
        };
        let mut hints: Vec<Endpoint> = Vec::new();
        for ep in entry_hints.iter().chain(signature.bootstrap.endpoints()) {
            if !hints.contains(ep) {
                hints.push(*ep);
            }
        }
        let now = transport.now();
        let unit = transport.ticks_per_unit().max(1);
        let timing = signature.timing;
        let mut client = EmulatedClient {
            signature: signature.clone(),
            roles: CommandRoles::resolve(signature),
            self_id,
            endpoint: transport.local_endpoint(),
            participation: options.participation,
            peer_table: PeerTable::new(options.peer_table_bound),
            rng,
            auto_probe: options.auto_probe,
            time_unit: unit,
            next_ping: now + timing.ping_interval.max(1) * unit,
            next_pex: now + timing.peer_exchange_interval.max(1) * unit,
            next_poll: now + timing.command_poll_interval.max(1) * unit,
            ping_misses: BTreeMap::new(),
            probes: BTreeMap::new(),
            observations: Vec::new(),
            discoveries: Vec::new(),
            harvested: Vec::new(),
            tap: None,
        };
        if hints.is_empty() {
            return Err(ConnectError::BootstrapFailed {
                attempts: options.attempts_per_hint,
            });
        }

        for _ in 0..options.attempts_per_hint.max(1) {
            for &hint in &hints {
                client.probes.entry(hint).or_insert(PeerSource::Bootstrap);
                if let Some(announce) = client.roles.announce {
                    let msg = client.build_request(announce);
                    client.transmit(transport, hint, &msg);
                }
                if let Some(ping) = client.roles.ping {
                    let msg = client.build_request(ping);
                    client.transmit(transport, hint, &msg);
                }
            }
            client.wait_and_pump(transport, 4);
            if !client.peer_table.is_empty() {
                break;
            }
        }
        if client.peer_table.is_empty() {
            return Err(ConnectError::BootstrapFailed {
                attempts: options.attempts_per_hint,
            });
        }
        // join dance, second half: request active peers from whoever
        // answered.
        if let Some(get_peers) = client.roles.get_peers {
            let responsive: Vec<Endpoint> = client.peer_table.iter().map(|r| r.endpoint).collect();
            for ep in responsive {
                let msg = client.build_request(get_peers);
                client.transmit(transport, ep, &msg);
            }
            client.wait_and_pump(transport, 4);
        }
        Ok(client)
    }

    fn wait_and_pump(&mut self, transport: &mut dyn Transport, steps: u32) {
        for _ in 0..steps {
            transport.step();
            self.pump_inbound(transport);
        }
    }

    // ---- identity and state accessors --------------------------------------

    pub fn self_id(&self) -> NodeId {
        self.self_id
    }

    pub fn endpoint(&self) -> Endpoint {
        self.endpoint
    }

    pub fn participation(&self) -> Participation {
        self.participation
    }

    pub fn peer_table(&self) -> &PeerTable {
        &self.peer_table
    }

    pub fn signature(&self) -> &NetworkSignature {
        &self.signature
    }

    pub fn attach_tap(&mut self, tap: Box<dyn PacketTap>) {
        self.tap = Some(tap);
    }

    pub fn detach_tap(&mut self) -> Option<Box<dyn PacketTap>> {
        self.tap.take()
    }

    /// Drains everything captured since the last call.
    pub fn take_observations(&mut self) -> Vec<Observation> {
        std::mem::take(&mut self.observations)
    }

    /// Drains peer records learned since the last call (duplicates included;
    /// the caller deduplicates by node id).
    pub fn take_discoveries(&mut self) -> Vec<PeerRecord> {
        std::mem::take(&mut self.discoveries)
    }

    /// Drains endpoints advertised in peers replies since the last call.
    pub fn take_harvested_endpoints(&mut self) -> Vec<Endpoint> {
        std::mem::take(&mut self.harvested)
    }

    /// Applies one external peer observation; exposed for controllers that
    /// merge observations from side channels.
    pub fn peer_table_update(&mut self, observation: PeerRecord) -> Vec<PeerRecord> {
        self.peer_table.upsert(observation)
    }

    // ---- driving ------------------------------------------------------------

    /// One service pass: answer queued inbound traffic and emit whatever the
    /// signature's schedule says is due. Returns the messages sent.
    pub fn service_tick(&mut self, transport: &mut dyn Transport, now: SimTime) -> Vec<Message> {
        let mut sent = Vec::new();
        sent.extend(self.pump_inbound(transport));

        let timing = self.signature.timing;
        if now >= self.next_ping {
            self.next_ping = now + timing.ping_interval.max(1) * self.time_unit;
            sent.extend(self.ping_round(transport));
        }
        let discovery = self.signature.discovery;
        if (discovery.peer_exchange_enabled || discovery.dht_enabled) && now >= self.next_pex {
            self.next_pex = now + timing.peer_exchange_interval.max(1) * self.time_unit;
            if let Some(get_peers) = self.roles.get_peers {
                let targets: Vec<Endpoint> = self.peer_table.iter().map(|r| r.endpoint).collect();
                for ep in targets {
                    let msg = self.build_request(get_peers);
                    self.transmit(transport, ep, &msg);
                    sent.push(msg);
                }
            }
        }
        if self.signature.cnc_style == CncStyle::Pull && now >= self.next_poll {
            self.next_poll = now + timing.command_poll_interval.max(1) * self.time_unit;
            if let (Some(poll), Some(target)) = (self.roles.poll, self.poll_target()) {
                let msg = self.build_request(poll);
                self.transmit(transport, target, &msg);
                sent.push(msg);
            }
        }
        sent
    }

    /// Pull networks fetch orders from the bootstrap contact (the C&C entry
    /// point) when one is still in the table, otherwise from a random peer.
    fn poll_target(&mut self) -> Option<Endpoint> {
        if let Some(rec) = self
            .peer_table
            .iter()
            .find(|r| r.source == PeerSource::Bootstrap)
        {
            return Some(rec.endpoint);
        }
        let eps: Vec<Endpoint> = self.peer_table.iter().map(|r| r.endpoint).collect();
        if eps.is_empty() {
            None
        } else {
            Some(eps[self.rng.random_range(0..eps.len())])
        }
    }

    fn ping_round(&mut self, transport: &mut dyn Transport) -> Vec<Message> {
        let mut sent = Vec::new();
        let entries: Vec<(NodeId, Endpoint)> = self
            .peer_table
            .iter()
            .map(|r| (r.node_id, r.endpoint))
            .collect();
        for (id, ep) in entries {
            let misses = {
                let m = self.ping_misses.entry(id).or_insert(0);
                *m += 1;
                *m
            };
            if misses >= PING_MISS_LIMIT {
                self.peer_table.remove(id);
                self.ping_misses.remove(&id);
                continue;
            }
            if let Some(ping) = self.roles.ping {
                let msg = self.build_request(ping);
                self.transmit(transport, ep, &msg);
                sent.push(msg);
            }
        }
        sent
    }

    /// Sends a liveness probe to an endpoint, tagging any answer with the
    /// given provenance. Controllers use this to walk discovery frontiers.
    pub fn probe(&mut self, transport: &mut dyn Transport, ep: Endpoint, source: PeerSource) {
        if ep == self.endpoint {
            return;
        }
        self.probes.entry(ep).or_insert(source);
        if let Some(ping) = self.roles.ping {
            let msg = self.build_request(ping);
            self.transmit(transport, ep, &msg);
        }
    }

    /// Asks an endpoint for its peer list.
    pub fn request_peers(&mut self, transport: &mut dyn Transport, ep: Endpoint) {
        if let Some(get_peers) = self.roles.get_peers {
            let msg = self.build_request(get_peers);
            self.transmit(transport, ep, &msg);
        }
    }

    fn pump_inbound(&mut self, transport: &mut dyn Transport) -> Vec<Message> {
        let mut sent = Vec::new();
        while let Some(datagram) = transport.recv() {
            let decoded = codec::decode(&datagram.bytes, &self.signature).ok();
            self.observe(
                datagram.at,
                Direction::Inbound,
                datagram.src,
                self.endpoint,
                &datagram.bytes,
                decoded.clone(),
            );
            if let Some(msg) = decoded {
                sent.extend(self.handle_message(transport, datagram.src, datagram.at, msg));
            }
        }
        sent
    }

    fn handle_message(
        &mut self,
        transport: &mut dyn Transport,
        src: Endpoint,
        at: SimTime,
        msg: Message,
    ) -> Vec<Message> {
        let mut sent = Vec::new();
        match self.roles.role_of(msg.opcode) {
            Some(Role::Ping) => {
                self.learn(&msg, src, at, PeerSource::Incoming);
                if let Some(pong) = self.roles.pong {
                    let reply = roles::build_reply(&self.signature, pong, self.self_id, &msg, &[]);
                    self.transmit(transport, src, &reply);
                    sent.push(reply);
                }
            }
            Some(Role::Pong) => {
                if let Some(id) = msg.first_node_id() {
                    let source = self.probes.remove(&src).unwrap_or(PeerSource::Incoming);
                    self.upsert(id, src, at, source);
                    self.ping_misses.remove(&id);
                }
            }
            Some(Role::GetPeers) => {
                self.learn(&msg, src, at, PeerSource::Incoming);
                if let Some(peers_op) = self.roles.peers {
                    let eps = self.pex_sample(src);
                    let reply =
                        roles::build_reply(&self.signature, peers_op, self.self_id, &msg, &eps);
                    self.transmit(transport, src, &reply);
                    sent.push(reply);
                }
            }
            Some(Role::Peers) => {
                let eps: Vec<Endpoint> = msg
                    .first_endpoints()
                    .unwrap_or(&[])
                    .iter()
                    .copied()
                    .filter(|ep| *ep != self.endpoint)
                    .collect();
                for ep in &eps {
                    self.harvested.push(*ep);
                }
                if self.auto_probe {
                    for ep in eps {
                        if !self.peer_table.contains_endpoint(ep) && !self.probes.contains_key(&ep)
                        {
                            self.probe(transport, ep, PeerSource::PeerExchange);
                        }
                    }
                }
            }
            Some(Role::Announce) => self.learn(&msg, src, at, PeerSource::Incoming),
            Some(Role::Poll) => {
                // We hold no orders to hand out.
            }
            Some(Role::Command) if self.participation == Participation::Conformant => {
                // Relay the order onward, simulated transport only.
                let targets: Vec<Endpoint> = self
                    .peer_table
                    .iter()
                    .map(|r| r.endpoint)
                    .filter(|ep| *ep != src)
                    .collect();
                for ep in targets {
                    self.transmit(transport, ep, &msg);
                    sent.push(msg.clone());
                }
            }
            Some(Role::Command) => {
                // Passive: recorded by the observation path, never relayed.
            }
            None => {}
        }
        sent
    }

    fn learn(&mut self, msg: &Message, src: Endpoint, at: SimTime, source: PeerSource) {
        if let Some(id) = msg.first_node_id()
            && id != self.self_id
        {
            self.upsert(id, src, at, source);
        }
    }

    fn upsert(&mut self, id: NodeId, ep: Endpoint, at: SimTime, source: PeerSource) {
        let record = PeerRecord::observed(id, ep, at, source);
        self.discoveries.push(record.clone());
        self.peer_table.upsert(record);
    }

    fn pex_sample(&mut self, requester: Endpoint) -> Vec<Endpoint> {
        let pool: Vec<Endpoint> = self
            .peer_table
            .iter()
            .map(|r| r.endpoint)
            .filter(|e| *e != requester)
            .collect();
        if pool.len() <= PEX_REPLY_MAX {
            return pool;
        }
        rand::seq::index::sample(&mut self.rng, pool.len(), PEX_REPLY_MAX)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    }

    fn build_request(&mut self, opcode: u8) -> Message {
        roles::build_request(&self.signature, opcode, self.self_id, &mut self.rng)
    }

    fn transmit(&mut self, transport: &mut dyn Transport, dst: Endpoint, msg: &Message) {
        let bytes = codec::encode(msg, &self.signature).expect("client emits conforming traffic");
        let at = transport.now();
        self.observe(
            at,
            Direction::Outbound,
            self.endpoint,
            dst,
            &bytes,
            Some(msg.clone()),
        );
        let _ = transport.send(dst, &bytes);
    }

    fn observe(
        &mut self,
        at: SimTime,
        direction: Direction,
        src: Endpoint,
        dst: Endpoint,
        bytes: &[u8],
        message: Option<Message>,
    ) {
        let tap_ref = self
            .tap
            .as_mut()
            .and_then(|tap| tap.record(at, direction, src, dst, bytes));
        self.observations.push(Observation {
            at,
            direction,
            src,
            dst,
            bytes: bytes.to_vec(),
            message,
            tap_ref,
        });
    }
}
