//! The simulated world: nodes, the event queue, churn, NAT and DHCP
//! machinery, command injection, and the ground-truth oracles.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::net::Ipv4Addr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::event::{EventKind, EventRecord, export_log};
use super::{BotnetType, OverlayTopology, SimConfig, SimError};
use crate::emulator::codec::{Message, decode, encode};
use crate::emulator::peer::{PeerRecord, PeerSource, PeerTable};
use crate::emulator::roles::{self, CommandRoles, Role};
use crate::signature::{CncStyle, NetworkSignature};
use crate::types::{Endpoint, NodeId, SimTime};

/// Peers advertised per exchange reply.
const PEX_REPLY_MAX: usize = 16;
/// Unanswered pings before an entry is dropped.
const PING_MISS_LIMIT: u32 = 3;

/// One simulated host.
#[derive(Debug, Clone)]
pub struct SimNode {
    pub node_id: NodeId,
    pub endpoint: Endpoint,
    pub is_bot: bool,
    pub is_legitimate_peer: bool,
    pub alive: bool,
    pub peer_table: PeerTable,
    /// (injection seq, payload, execution time)
    pub executed_commands: Vec<(u64, Vec<u8>, SimTime)>,
    nat_box: Option<usize>,
    ping_misses: BTreeMap<NodeId, u32>,
    probes: BTreeMap<Endpoint, PeerSource>,
    seen_commands: BTreeSet<u64>,
    /// Peer-exchange advertisement override (two-tier worlds advertise
    /// supernodes instead of sampling the table).
    advertised: Option<Vec<Endpoint>>,
    next_poll: SimTime,
}

/// A datagram delivered to an external (non-simulated) endpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredPacket {
    pub src: Endpoint,
    pub dst: Endpoint,
    pub at: SimTime,
    pub bytes: Vec<u8>,
}

/// Receipt for an injected command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Injection {
    pub seq: u64,
    pub at: SimTime,
}

#[derive(Debug, Clone)]
enum Event {
    Deliver {
        src: Endpoint,
        dst: Endpoint,
        bytes: Vec<u8>,
    },
    PingTick(usize),
    PexTick(usize),
    PollTick(usize),
    ChurnLeave,
    ChurnJoin,
    DhcpTick,
    AutoCommand,
}

#[derive(Debug)]
struct QueuedEvent {
    time: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for QueuedEvent {}
impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for QueuedEvent {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

#[derive(Debug, Clone)]
struct StagedCommand {
    seq: u64,
    key: Vec<u8>,
    payload: Vec<u8>,
}

pub struct SimWorld {
    config: SimConfig,
    signature: NetworkSignature,
    roles: CommandRoles,
    now: SimTime,
    event_seq: u64,
    queue: BinaryHeap<Reverse<QueuedEvent>>,
    nodes: Vec<SimNode>,
    by_id: BTreeMap<NodeId, usize>,
    /// Current endpoint assignment; NAT boxes map to several nodes.
    routing: BTreeMap<Endpoint, Vec<usize>>,
    /// (box endpoint, remote endpoint) -> node behind the box that last
    /// initiated traffic toward the remote. Replies route back through it.
    nat_flows: BTreeMap<(Endpoint, Endpoint), usize>,
    externals: BTreeMap<Endpoint, VecDeque<DeliveredPacket>>,
    next_external: u16,
    rng: ChaCha8Rng,
    log: Vec<EventRecord>,
    botmaster: usize,
    staged: Option<StagedCommand>,
    next_command_seq: u64,
    /// First time each (bot, endpoint) pairing was live.
    pairings: BTreeMap<(NodeId, Endpoint), SimTime>,
    /// Alive intervals per node: (joined, left); open interval = still alive.
    intervals: BTreeMap<NodeId, Vec<(SimTime, Option<SimTime>)>>,
    address_pool_base: u32,
}

impl SimWorld {
    // ---- construction ----------------------------------------------------

    pub fn build(config: &SimConfig, signature: &NetworkSignature) -> Result<SimWorld, SimError> {
        validate_config(config)?;
        let roles = CommandRoles::resolve(signature);
        roles.require_overlay(signature)?;

        let n = config.node_count;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut ids = BTreeSet::new();
        let mut id_list = Vec::with_capacity(n);
        while id_list.len() < n {
            let id = NodeId(rng.random());
            if ids.insert(id) {
                id_list.push(id);
            }
        }

        let bot_flags = assign_bots(config, n, &mut rng)?;
        let bot_count = bot_flags.iter().filter(|b| **b).count();

        // NAT boxes: many-to-one public endpoints, roughly four nodes each.
        let nat_members = (config.nat_fraction * n as f64).floor() as usize;
        let box_count = ((config.nat_fraction * n as f64) / 4.0).ceil() as usize;
        let mut shuffled: Vec<usize> = (0..n).collect();
        shuffled.shuffle(&mut rng);
        let mut nat_box_of: Vec<Option<usize>> = vec![None; n];
        for (i, &node) in shuffled.iter().take(nat_members).enumerate() {
            nat_box_of[node] = Some(i % box_count.max(1));
        }

        let pool_base = 0x0A00_0000u32; // 10.0.0.0/8
        let mut nodes = Vec::with_capacity(n);
        for (idx, id) in id_list.iter().enumerate() {
            let endpoint = match nat_box_of[idx] {
                Some(b) => nat_box_endpoint(b),
                None => Endpoint::new(
                    Ipv4Addr::from(
                        pool_base | rng.random_range(0..config.dhcp.address_pool_size) as u32,
                    ),
                    20_000 + idx as u16,
                ),
            };
            nodes.push(SimNode {
                node_id: *id,
                endpoint,
                is_bot: bot_flags[idx],
                is_legitimate_peer: match config.botnet_type {
                    BotnetType::BotOnly => false,
                    BotnetType::Parasite => true,
                    BotnetType::Leeching => !bot_flags[idx],
                },
                alive: true,
                peer_table: PeerTable::new(table_bound(config, n)),
                executed_commands: Vec::new(),
                nat_box: nat_box_of[idx],
                ping_misses: BTreeMap::new(),
                probes: BTreeMap::new(),
                seen_commands: BTreeSet::new(),
                advertised: None,
                next_poll: 0,
            });
        }

        let botmaster = bot_flags.iter().position(|b| *b).expect("at least one bot");

        let mut world = SimWorld {
            config: config.clone(),
            signature: signature.clone(),
            roles,
            now: 0,
            event_seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            by_id: id_list.iter().enumerate().map(|(i, id)| (*id, i)).collect(),
            routing: BTreeMap::new(),
            nat_flows: BTreeMap::new(),
            externals: BTreeMap::new(),
            next_external: 0,
            rng,
            log: Vec::new(),
            botmaster,
            staged: None,
            next_command_seq: 0,
            pairings: BTreeMap::new(),
            intervals: BTreeMap::new(),
            address_pool_base: pool_base,
        };

        for idx in 0..n {
            let node = &world.nodes[idx];
            world.routing.entry(node.endpoint).or_default().push(idx);
        }
        world.wire_overlay()?;
        debug_assert_eq!(bot_count, world.nodes.iter().filter(|n| n.is_bot).count());

        for idx in 0..n {
            let (id, ep, is_bot) = {
                let node = &world.nodes[idx];
                (node.node_id, node.endpoint, node.is_bot)
            };
            world.intervals.entry(id).or_default().push((0, None));
            if is_bot {
                world.pairings.entry((id, ep)).or_insert(0);
            }
            world.log.push(EventRecord {
                time: 0,
                kind: EventKind::Join { node: id },
            });
        }

        for idx in 0..n {
            if world.nodes[idx].is_bot {
                world.schedule_node_ticks(idx);
            }
        }
        if config.churn.mean_leave_interval > 0 {
            let at = world.exp_after(config.churn.mean_leave_interval);
            world.schedule(at, Event::ChurnLeave);
        }
        if config.churn.mean_join_interval > 0 {
            let at = world.exp_after(config.churn.mean_join_interval);
            world.schedule(at, Event::ChurnJoin);
        }
        if let Some(interval) = config.dhcp.reassign_interval {
            world.schedule(interval, Event::DhcpTick);
        }
        if let Some(interval) = config.command_interval {
            world.schedule(interval, Event::AutoCommand);
        }
        Ok(world)
    }

    fn wire_overlay(&mut self) -> Result<(), SimError> {
        let bots: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_bot)
            .collect();
        match self.config.topology {
            OverlayTopology::RingMesh => {
                // Host ring over everyone keeps the whole world connected.
                let mut ring: Vec<usize> = (0..self.nodes.len()).collect();
                ring.shuffle(&mut self.rng);
                for i in 0..ring.len() {
                    let next = ring[(i + 1) % ring.len()];
                    if ring[i] != next {
                        self.link_mutual(ring[i], next);
                    }
                }
                // Bot ring guarantees the signature overlay is connected even
                // when legitimate entries later age out.
                if bots.len() < self.nodes.len() {
                    let mut bot_ring = bots.clone();
                    bot_ring.shuffle(&mut self.rng);
                    for i in 0..bot_ring.len() {
                        let next = bot_ring[(i + 1) % bot_ring.len()];
                        if bot_ring[i] != next {
                            self.link_mutual(bot_ring[i], next);
                        }
                    }
                }
                // Random chords up to the degree target.
                for &b in &bots {
                    let mut guard = 0;
                    while self.nodes[b].peer_table.len() < self.config.degree_target && guard < 64 {
                        guard += 1;
                        let other = bots[self.rng.random_range(0..bots.len())];
                        if other == b
                            || self.nodes[b]
                                .peer_table
                                .get(self.nodes[other].node_id)
                                .is_some()
                        {
                            continue;
                        }
                        self.link_mutual(b, other);
                    }
                }
            }
            OverlayTopology::Star => {
                let hub = self.botmaster;
                self.nodes[hub].peer_table = PeerTable::new(self.nodes.len().max(8));
                for &b in &bots {
                    if b != hub {
                        self.link_mutual(hub, b);
                    }
                }
            }
            OverlayTopology::TwoTier { supernodes } => {
                if supernodes == 0 || supernodes >= bots.len() {
                    return Err(SimError::InvalidConfig {
                        field: "topology.supernodes",
                        reason: format!("need 1..{} supernodes, got {supernodes}", bots.len()),
                    });
                }
                let supers: Vec<usize> = bots[..supernodes].to_vec();
                let leaves: Vec<usize> = bots[supernodes..].to_vec();
                let super_eps: Vec<Endpoint> =
                    supers.iter().map(|&s| self.nodes[s].endpoint).collect();
                for &s in &supers {
                    self.nodes[s].peer_table = PeerTable::new(self.nodes.len().max(8));
                }
                for i in 0..supers.len() {
                    let next = supers[(i + 1) % supers.len()];
                    if supers[i] != next {
                        self.link_mutual(supers[i], next);
                    }
                }
                for &leaf in &leaves {
                    for &s in &supers {
                        self.link_mutual(leaf, s);
                    }
                }
                for &b in &bots {
                    self.nodes[b].advertised = Some(super_eps.clone());
                }
            }
        }
        // Legitimate non-participants get a decorative host-network ring.
        let others: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].is_bot)
            .collect();
        for i in 0..others.len() {
            let next = others[(i + 1) % others.len()];
            if others[i] != next {
                self.link_mutual(others[i], next);
            }
        }
        Ok(())
    }

    fn link_mutual(&mut self, a: usize, b: usize) {
        let (ida, epa) = (self.nodes[a].node_id, self.nodes[a].endpoint);
        let (idb, epb) = (self.nodes[b].node_id, self.nodes[b].endpoint);
        for (node, id, ep) in [(a, idb, epb), (b, ida, epa)] {
            let table = &mut self.nodes[node].peer_table;
            if table.get(id).is_some() || table.len() < table.bound() {
                table.upsert(PeerRecord::observed(id, ep, 0, PeerSource::Bootstrap));
            }
        }
    }

    fn schedule_node_ticks(&mut self, idx: usize) {
        let timing = self.signature.timing;
        let at = self.now + self.rng.random_range(1..=timing.ping_interval.max(1));
        self.schedule(at, Event::PingTick(idx));
        if self.signature.discovery.peer_exchange_enabled || self.signature.discovery.dht_enabled {
            let at = self.now
                + self
                    .rng
                    .random_range(1..=timing.peer_exchange_interval.max(1));
            self.schedule(at, Event::PexTick(idx));
        }
        if self.signature.cnc_style == CncStyle::Pull {
            let at = self.now
                + self
                    .rng
                    .random_range(1..=timing.command_poll_interval.max(1));
            self.nodes[idx].next_poll = at;
            self.schedule(at, Event::PollTick(idx));
        }
    }

    // ---- time ------------------------------------------------------------

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Executes every pending event with time ≤ t, then sets the clock to t.
    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        if t < self.now {
            return Err(SimError::TimeReversal {
                now: self.now,
                target: t,
            });
        }
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.time > t {
                break;
            }
            let Reverse(ev) = self.queue.pop().unwrap();
            self.now = ev.time;
            self.execute(ev.event);
        }
        self.now = t;
        Ok(())
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        let seq = self.event_seq;
        self.event_seq += 1;
        self.queue.push(Reverse(QueuedEvent { time, seq, event }));
    }

    fn exp_after(&mut self, mean: SimTime) -> SimTime {
        let u: f64 = self.rng.random();
        let draw = (-(mean as f64) * (1.0 - u).ln()).round() as u64;
        self.now + draw.max(1)
    }

    // ---- event execution ---------------------------------------------------

    fn execute(&mut self, event: Event) {
        match event {
            Event::Deliver { src, dst, bytes } => self.deliver(src, dst, bytes),
            Event::PingTick(n) => self.ping_tick(n),
            Event::PexTick(n) => self.pex_tick(n),
            Event::PollTick(n) => self.poll_tick(n),
            Event::ChurnLeave => self.churn_leave(),
            Event::ChurnJoin => self.churn_join(),
            Event::DhcpTick => self.dhcp_tick(),
            Event::AutoCommand => self.auto_command(),
        }
    }

    fn deliver(&mut self, src: Endpoint, dst: Endpoint, bytes: Vec<u8>) {
        if let Some(mailbox) = self.externals.get_mut(&dst) {
            mailbox.push_back(DeliveredPacket {
                src,
                dst,
                at: self.now,
                bytes,
            });
            return;
        }
        let Some(target) = self.route(dst, src) else {
            return;
        };
        // Only live protocol participants answer signature traffic.
        if !self.nodes[target].alive || !self.nodes[target].is_bot {
            return;
        }
        let Ok(msg) = decode(&bytes, &self.signature) else {
            return;
        };
        self.handle_node_message(target, src, msg);
    }

    fn route(&self, dst: Endpoint, src: Endpoint) -> Option<usize> {
        let holders = self.routing.get(&dst)?;
        let live: Vec<usize> = holders
            .iter()
            .copied()
            .filter(|&i| self.nodes[i].endpoint == dst)
            .collect();
        match live.len() {
            0 => None,
            1 => Some(live[0]),
            _ => {
                // NAT box: route back along the flow that opened it, else to
                // the designated listener (lowest node id alive).
                if let Some(&n) = self.nat_flows.get(&(dst, src))
                    && self.nodes[n].alive
                    && self.nodes[n].endpoint == dst
                {
                    return Some(n);
                }
                live.into_iter()
                    .filter(|&i| self.nodes[i].alive)
                    .min_by_key(|&i| self.nodes[i].node_id)
            }
        }
    }

    fn handle_node_message(&mut self, target: usize, src: Endpoint, msg: Message) {
        match self.roles.role_of(msg.opcode) {
            Some(Role::Ping) => {
                self.learn_incoming(target, &msg, src);
                if let Some(pong) = self.roles.pong {
                    let self_id = self.nodes[target].node_id;
                    let reply = roles::build_reply(&self.signature, pong, self_id, &msg, &[]);
                    self.node_send(target, src, &reply);
                }
            }
            Some(Role::Pong) => {
                if let Some(id) = msg.first_node_id() {
                    let source = self.nodes[target]
                        .probes
                        .remove(&src)
                        .unwrap_or(PeerSource::Incoming);
                    self.node_upsert(target, id, src, source);
                    self.nodes[target].ping_misses.remove(&id);
                }
            }
            Some(Role::GetPeers) => {
                self.learn_incoming(target, &msg, src);
                if let Some(peers_op) = self.roles.peers {
                    let eps = self.pex_sample(target, src);
                    let self_id = self.nodes[target].node_id;
                    let reply = roles::build_reply(&self.signature, peers_op, self_id, &msg, &eps);
                    self.node_send(target, src, &reply);
                }
            }
            Some(Role::Peers) => {
                let own = self.nodes[target].endpoint;
                let candidates: Vec<Endpoint> = msg
                    .first_endpoints()
                    .unwrap_or(&[])
                    .iter()
                    .copied()
                    .filter(|ep| {
                        *ep != own
                            && !self.nodes[target].peer_table.contains_endpoint(*ep)
                            && !self.nodes[target].probes.contains_key(ep)
                    })
                    .collect();
                for ep in candidates {
                    self.nodes[target]
                        .probes
                        .insert(ep, PeerSource::PeerExchange);
                    self.probe(target, ep);
                }
            }
            Some(Role::Announce) => self.learn_incoming(target, &msg, src),
            Some(Role::Poll) => {
                if target == self.botmaster
                    && let Some(staged) = self.staged.clone()
                    && let Some(cmd_op) = self.roles.command
                {
                    let reply = roles::build_command(
                        &self.signature,
                        cmd_op,
                        &staged.key,
                        staged.seq,
                        &staged.payload,
                    );
                    self.node_send(target, src, &reply);
                }
            }
            Some(Role::Command) => self.handle_command(target, &msg),
            None => {}
        }
    }

    fn handle_command(&mut self, target: usize, msg: &Message) {
        let (key, seq, payload) = roles::command_parts(msg);
        if !self.nodes[target].seen_commands.insert(seq) {
            return;
        }
        if key != self.config.botmaster_key {
            return;
        }
        let now = self.now;
        self.nodes[target]
            .executed_commands
            .push((seq, payload, now));
        if self.signature.cnc_style == CncStyle::Push {
            // Every bot relays orders onward to every peer it knows.
            let targets: Vec<Endpoint> = self.nodes[target]
                .peer_table
                .iter()
                .map(|r| r.endpoint)
                .collect();
            for ep in targets {
                self.node_send_raw(target, ep, msg);
            }
        }
    }

    fn learn_incoming(&mut self, target: usize, msg: &Message, src: Endpoint) {
        if let Some(id) = msg.first_node_id()
            && id != self.nodes[target].node_id
        {
            self.node_upsert(target, id, src, PeerSource::Incoming);
        }
    }

    /// Refreshes known peers always; admits new ones only while there is
    /// room. Full tables drop new contacts rather than evicting live edges,
    /// so the overlay stays stable under traffic (ping timeouts are the only
    /// eviction path).
    fn node_upsert(&mut self, target: usize, id: NodeId, ep: Endpoint, source: PeerSource) {
        let now = self.now;
        let table = &mut self.nodes[target].peer_table;
        if table.get(id).is_some() || table.len() < table.bound() {
            table.upsert(PeerRecord::observed(id, ep, now, source));
        }
    }

    fn pex_sample(&mut self, target: usize, requester: Endpoint) -> Vec<Endpoint> {
        let pool: Vec<Endpoint> = match &self.nodes[target].advertised {
            Some(eps) => eps.iter().copied().filter(|e| *e != requester).collect(),
            None => self.nodes[target]
                .peer_table
                .iter()
                .map(|r| r.endpoint)
                .filter(|e| *e != requester)
                .collect(),
        };
        if pool.len() <= PEX_REPLY_MAX {
            return pool;
        }
        rand::seq::index::sample(&mut self.rng, pool.len(), PEX_REPLY_MAX)
            .into_iter()
            .map(|i| pool[i])
            .collect()
    }

    fn probe(&mut self, from: usize, ep: Endpoint) {
        if let Some(ping) = self.roles.ping {
            let self_id = self.nodes[from].node_id;
            let msg = roles::build_request(&self.signature, ping, self_id, &mut self.rng);
            self.node_send(from, ep, &msg);
        }
    }

    fn node_send(&mut self, from: usize, dst: Endpoint, msg: &Message) {
        self.node_send_raw(from, dst, msg);
    }

    fn node_send_raw(&mut self, from: usize, dst: Endpoint, msg: &Message) {
        let bytes = encode(msg, &self.signature).expect("simulated traffic conforms");
        let src = self.nodes[from].endpoint;
        if self.nodes[from].nat_box.is_some() {
            self.nat_flows.insert((src, dst), from);
        }
        self.post_message(src, dst, bytes);
    }

    fn post_message(&mut self, src: Endpoint, dst: Endpoint, bytes: Vec<u8>) {
        self.log.push(EventRecord {
            time: self.now,
            kind: EventKind::Msg {
                src,
                dst,
                bytes: bytes.clone(),
            },
        });
        self.schedule(self.now + 1, Event::Deliver { src, dst, bytes });
    }

    // ---- periodic node behavior -------------------------------------------

    fn ping_tick(&mut self, idx: usize) {
        if !self.nodes[idx].alive {
            return;
        }
        let entries: Vec<(NodeId, Endpoint)> = self.nodes[idx]
            .peer_table
            .iter()
            .map(|r| (r.node_id, r.endpoint))
            .collect();
        for (id, ep) in &entries {
            let misses = {
                let node = &mut self.nodes[idx];
                let m = node.ping_misses.entry(*id).or_insert(0);
                *m += 1;
                *m
            };
            if misses >= PING_MISS_LIMIT {
                self.nodes[idx].peer_table.remove(*id);
                self.nodes[idx].ping_misses.remove(id);
                continue;
            }
            if let Some(ping) = self.roles.ping {
                let self_id = self.nodes[idx].node_id;
                let msg = roles::build_request(&self.signature, ping, self_id, &mut self.rng);
                self.node_send(idx, *ep, &msg);
            }
        }
        // Below-target tables ask a surviving peer for more contacts.
        let discovery = &self.signature.discovery;
        if (discovery.peer_exchange_enabled || discovery.dht_enabled)
            && self.nodes[idx].peer_table.len() < self.config.degree_target
            && !self.nodes[idx].peer_table.is_empty()
        {
            self.send_get_peers_to_random(idx);
        }
        let at = self.now + self.signature.timing.ping_interval.max(1);
        self.schedule(at, Event::PingTick(idx));
    }

    fn pex_tick(&mut self, idx: usize) {
        if !self.nodes[idx].alive {
            return;
        }
        if !self.nodes[idx].peer_table.is_empty() {
            self.send_get_peers_to_random(idx);
        }
        let at = self.now + self.signature.timing.peer_exchange_interval.max(1);
        self.schedule(at, Event::PexTick(idx));
    }

    fn send_get_peers_to_random(&mut self, idx: usize) {
        let Some(get_peers) = self.roles.get_peers else {
            return;
        };
        let eps: Vec<Endpoint> = self.nodes[idx]
            .peer_table
            .iter()
            .map(|r| r.endpoint)
            .collect();
        if eps.is_empty() {
            return;
        }
        let ep = eps[self.rng.random_range(0..eps.len())];
        let self_id = self.nodes[idx].node_id;
        let msg = roles::build_request(&self.signature, get_peers, self_id, &mut self.rng);
        self.node_send(idx, ep, &msg);
    }

    fn poll_tick(&mut self, idx: usize) {
        if !self.nodes[idx].alive {
            return;
        }
        if let Some(poll) = self.roles.poll {
            let botmaster_ep = self.nodes[self.botmaster].endpoint;
            let self_id = self.nodes[idx].node_id;
            let msg = roles::build_request(&self.signature, poll, self_id, &mut self.rng);
            self.node_send(idx, botmaster_ep, &msg);
        }
        let at = self.now + self.signature.timing.command_poll_interval.max(1);
        self.nodes[idx].next_poll = at;
        self.schedule(at, Event::PollTick(idx));
    }

    fn churn_leave(&mut self) {
        let alive: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].alive)
            .collect();
        if alive.len() > 1 {
            let victim = alive[self.rng.random_range(0..alive.len())];
            self.nodes[victim].alive = false;
            let id = self.nodes[victim].node_id;
            if let Some(intervals) = self.intervals.get_mut(&id)
                && let Some(last) = intervals.last_mut()
                && last.1.is_none()
            {
                last.1 = Some(self.now);
            }
            self.log.push(EventRecord {
                time: self.now,
                kind: EventKind::Leave { node: id },
            });
        }
        let at = self.exp_after(self.config.churn.mean_leave_interval);
        self.schedule(at, Event::ChurnLeave);
    }

    fn churn_join(&mut self) {
        let departed: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| !self.nodes[i].alive)
            .collect();
        if !departed.is_empty() {
            let idx = departed[self.rng.random_range(0..departed.len())];
            self.nodes[idx].alive = true;
            self.nodes[idx].ping_misses.clear();
            let (id, ep, is_bot) = {
                let n = &self.nodes[idx];
                (n.node_id, n.endpoint, n.is_bot)
            };
            self.intervals.entry(id).or_default().push((self.now, None));
            self.log.push(EventRecord {
                time: self.now,
                kind: EventKind::Join { node: id },
            });
            if is_bot {
                self.pairings.entry((id, ep)).or_insert(self.now);
                self.announce_to_table(idx);
                self.schedule_node_ticks(idx);
            }
        }
        let at = self.exp_after(self.config.churn.mean_join_interval);
        self.schedule(at, Event::ChurnJoin);
    }

    fn announce_to_table(&mut self, idx: usize) {
        let Some(announce) = self.roles.announce else {
            return;
        };
        let self_id = self.nodes[idx].node_id;
        let msg = roles::build_request(&self.signature, announce, self_id, &mut self.rng);
        let eps: Vec<Endpoint> = self.nodes[idx]
            .peer_table
            .iter()
            .map(|r| r.endpoint)
            .collect();
        for ep in eps {
            self.node_send(idx, ep, &msg);
        }
    }

    fn dhcp_tick(&mut self) {
        let pool = self.config.dhcp.address_pool_size;
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].nat_box.is_some() {
                continue;
            }
            let old = self.nodes[idx].endpoint;
            let new_addr =
                Ipv4Addr::from(self.address_pool_base | self.rng.random_range(0..pool) as u32);
            if new_addr == old.addr {
                continue;
            }
            let new = Endpoint::new(new_addr, old.port);
            if let Some(holders) = self.routing.get_mut(&old) {
                holders.retain(|&i| i != idx);
                if holders.is_empty() {
                    self.routing.remove(&old);
                }
            }
            self.routing.entry(new).or_default().push(idx);
            self.nodes[idx].endpoint = new;
            let (id, alive, is_bot) = {
                let n = &self.nodes[idx];
                (n.node_id, n.alive, n.is_bot)
            };
            self.log.push(EventRecord {
                time: self.now,
                kind: EventKind::Reassign { node: id, old, new },
            });
            if alive && is_bot {
                self.pairings.entry((id, new)).or_insert(self.now);
                // The lease changed under us; tell our contacts where we went.
                self.announce_to_table(idx);
            }
        }
        if let Some(interval) = self.config.dhcp.reassign_interval {
            self.schedule(self.now + interval, Event::DhcpTick);
        }
    }

    fn auto_command(&mut self) {
        let seq_hint = self.next_command_seq;
        let payload = format!("order-{seq_hint}").into_bytes();
        let key = self.config.botmaster_key.clone();
        let style = self.signature.cnc_style;
        let _ = self.inject_command(&payload, &key, style);
        if let Some(interval) = self.config.command_interval {
            self.schedule(self.now + interval, Event::AutoCommand);
        }
    }

    // ---- command injection -------------------------------------------------

    /// Stages (pull) or floods (push) a command as the botmaster would.
    /// A wrong key is a modeled outcome: bots simply refuse to execute.
    pub fn inject_command(
        &mut self,
        command: &[u8],
        key: &[u8],
        style: CncStyle,
    ) -> Result<Injection, SimError> {
        if style != self.signature.cnc_style {
            return Err(SimError::StyleMismatch {
                expected: self.signature.cnc_style,
                got: style,
            });
        }
        let seq = self.next_command_seq;
        self.next_command_seq += 1;
        let cmd_op = self.roles.command.expect("command role checked at build");
        let msg = roles::build_command(&self.signature, cmd_op, key, seq, command);
        match style {
            CncStyle::Pull => {
                self.staged = Some(StagedCommand {
                    seq,
                    key: key.to_vec(),
                    payload: command.to_vec(),
                });
            }
            CncStyle::Push => {}
        }
        // The botmaster receives its own order first; push handling floods
        // it onward from there.
        let bytes = encode(&msg, &self.signature).expect("command conforms");
        let botmaster_ep = self.nodes[self.botmaster].endpoint;
        self.post_message(operator_endpoint(), botmaster_ep, bytes);
        Ok(Injection { seq, at: self.now })
    }

    // ---- externals (emulated clients, checkers) ----------------------------

    pub fn attach_external(&mut self) -> Endpoint {
        let ep = Endpoint::new(Ipv4Addr::new(192, 168, 100, 1), 6000 + self.next_external);
        self.next_external += 1;
        self.externals.insert(ep, VecDeque::new());
        ep
    }

    pub fn send_external(&mut self, src: Endpoint, dst: Endpoint, bytes: Vec<u8>) {
        self.post_message(src, dst, bytes);
    }

    pub fn recv_external(&mut self, ep: Endpoint) -> Option<DeliveredPacket> {
        self.externals.get_mut(&ep)?.pop_front()
    }

    // ---- oracles and accessors ----------------------------------------------

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn signature(&self) -> &NetworkSignature {
        &self.signature
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    pub fn node_by_id(&self, id: NodeId) -> Option<&SimNode> {
        self.by_id.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn contains_node_id(&self, id: NodeId) -> bool {
        self.by_id.contains_key(&id)
    }

    pub fn botmaster_endpoint(&self) -> Endpoint {
        self.nodes[self.botmaster].endpoint
    }

    pub fn botmaster_id(&self) -> NodeId {
        self.nodes[self.botmaster].node_id
    }

    pub fn event_log(&self) -> &[EventRecord] {
        &self.log
    }

    pub fn export_event_log(&self) -> String {
        export_log(&self.log)
    }

    /// Deterministic bootstrap hints: the botmaster first, then alive bots
    /// in index order.
    pub fn entry_hints(&self, k: usize) -> Vec<Endpoint> {
        let mut hints = vec![self.nodes[self.botmaster].endpoint];
        for node in &self.nodes {
            if hints.len() >= k {
                break;
            }
            if node.is_bot && node.alive && !hints.contains(&node.endpoint) {
                hints.push(node.endpoint);
            }
        }
        hints.truncate(k.max(1));
        hints
    }

    fn alive_at(&self, id: NodeId, t: SimTime) -> bool {
        self.intervals
            .get(&id)
            .is_some_and(|iv| iv.iter().any(|(s, e)| *s <= t && e.is_none_or(|e| t < e)))
    }

    /// Bots alive at time t.
    pub fn oracle_live_set(&self, t: SimTime) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_bot && self.alive_at(n.node_id, t))
            .map(|n| n.node_id)
            .collect()
    }

    /// Bots ever alive on [0, t].
    pub fn oracle_footprint_set(&self, t: SimTime) -> BTreeSet<NodeId> {
        self.nodes
            .iter()
            .filter(|n| {
                n.is_bot
                    && self
                        .intervals
                        .get(&n.node_id)
                        .is_some_and(|iv| iv.iter().any(|(s, _)| *s <= t))
            })
            .map(|n| n.node_id)
            .collect()
    }

    /// Every (bot, endpoint) pairing live on [0, t], projected to endpoints.
    /// One occurrence per distinct pairing, so NAT sharing shows up as
    /// repeated endpoints and DHCP churn as extra ones.
    pub fn oracle_ip_observations(&self, t: SimTime) -> Vec<Endpoint> {
        self.pairings
            .iter()
            .filter(|(_, first)| **first <= t)
            .map(|((_, ep), _)| *ep)
            .collect()
    }

    /// BFS over the alive-bot peer graph from the botmaster: the set a push
    /// flood must reach.
    pub fn oracle_push_reachable(&self) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        if !self.nodes[self.botmaster].alive {
            return seen;
        }
        let mut frontier = vec![self.botmaster];
        seen.insert(self.nodes[self.botmaster].node_id);
        while let Some(idx) = frontier.pop() {
            for record in self.nodes[idx].peer_table.iter() {
                let Some(&next) = self.by_id.get(&record.node_id) else {
                    continue;
                };
                if self.nodes[next].alive && self.nodes[next].is_bot && seen.insert(record.node_id)
                {
                    frontier.push(next);
                }
            }
        }
        seen
    }

    /// Scheduled next poll tick per alive bot (pull worlds).
    pub fn oracle_next_polls(&self) -> BTreeMap<NodeId, SimTime> {
        self.nodes
            .iter()
            .filter(|n| n.is_bot && n.alive)
            .map(|n| (n.node_id, n.next_poll))
            .collect()
    }

    /// Nodes that executed injection `seq`, with execution times.
    pub fn executions(&self, seq: u64) -> Vec<(NodeId, SimTime)> {
        self.nodes
            .iter()
            .filter_map(|n| {
                n.executed_commands
                    .iter()
                    .find(|(s, _, _)| *s == seq)
                    .map(|(_, _, t)| (n.node_id, *t))
            })
            .collect()
    }
}

fn validate_config(config: &SimConfig) -> Result<(), SimError> {
    let fail = |field: &'static str, reason: String| Err(SimError::InvalidConfig { field, reason });
    if config.node_count == 0 {
        return fail("node_count", "must be positive".into());
    }
    if config.degree_target == 0 || config.degree_target >= config.node_count {
        return fail(
            "degree_target",
            format!(
                "must be in 1..{} (node_count), got {}",
                config.node_count, config.degree_target
            ),
        );
    }
    if config.dhcp.address_pool_size == 0 {
        return fail("dhcp.address_pool_size", "must be at least 1".into());
    }
    if config.dhcp.address_pool_size > (1 << 24) {
        return fail(
            "dhcp.address_pool_size",
            "exceeds the 10.0.0.0/8 pool".into(),
        );
    }
    if !(0.0..=1.0).contains(&config.vulnerable_fraction) {
        return fail("vulnerable_fraction", "must be within [0, 1]".into());
    }
    if !(0.0..=1.0).contains(&config.nat_fraction) {
        return fail("nat_fraction", "must be within [0, 1]".into());
    }
    Ok(())
}

fn assign_bots(config: &SimConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<bool>, SimError> {
    match config.botnet_type {
        BotnetType::BotOnly => Ok(vec![true; n]),
        BotnetType::Parasite | BotnetType::Leeching => {
            let bots = (config.vulnerable_fraction * n as f64).floor() as usize;
            if bots == 0 {
                return Err(SimError::InvalidConfig {
                    field: "vulnerable_fraction",
                    reason: "mixed worlds need at least one infectable host".into(),
                });
            }
            let mut flags = vec![false; n];
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            for &i in order.iter().take(bots) {
                flags[i] = true;
            }
            Ok(flags)
        }
    }
}

fn table_bound(config: &SimConfig, _n: usize) -> usize {
    (config.degree_target * 2).max(8)
}

fn nat_box_endpoint(box_index: usize) -> Endpoint {
    // 172.16.0.0/12, one public endpoint per box.
    let addr = 0xAC10_0000u32 | (box_index as u32 & 0x000F_FFFF);
    Endpoint::new(Ipv4Addr::from(addr), 40_000)
}

fn operator_endpoint() -> Endpoint {
    Endpoint::new(Ipv4Addr::new(198, 51, 100, 1), 9)
}
