//! Maps a signature's named commands onto the protocol roles the emulator
//! and simulator know how to drive.
//!
//! Role binding is by command name (a small alias set per role). Within a
//! message, role semantics bind to field *kinds*, not names: the first
//! node_id field carries the sender identity, the first endpoint_list field
//! carries a peer list, byte-string fields of a command message are key then
//! payload, and the first u64 is the command sequence number.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::codec::{FieldValue, Message};
use crate::signature::{CncStyle, FieldKind, NetworkSignature};
use crate::types::{Endpoint, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Ping,
    Pong,
    GetPeers,
    Peers,
    Announce,
    Poll,
    Command,
}

const ALIASES: [(Role, &[&str]); 7] = [
    (Role::Ping, &["ping"]),
    (Role::Pong, &["pong"]),
    (
        Role::GetPeers,
        &["get_peers", "getpeers", "peer_request", "find_peers"],
    ),
    (Role::Peers, &["peers", "peer_list", "peers_reply"]),
    (Role::Announce, &["announce", "join", "hello"]),
    (Role::Poll, &["poll", "get_order", "pull"]),
    (Role::Command, &["command", "order", "cmd"]),
];

#[derive(Debug, Error, PartialEq, Eq)]
#[error("signature `{network_id}` defines no `{role}` command, required here")]
pub struct MissingRole {
    pub network_id: String,
    pub role: &'static str,
}

/// Resolved opcodes for each role the signature provides.
#[derive(Debug, Clone, Copy, Default)]
pub struct CommandRoles {
    pub ping: Option<u8>,
    pub pong: Option<u8>,
    pub get_peers: Option<u8>,
    pub peers: Option<u8>,
    pub announce: Option<u8>,
    pub poll: Option<u8>,
    pub command: Option<u8>,
}

impl CommandRoles {
    pub fn resolve(sig: &NetworkSignature) -> Self {
        let mut roles = CommandRoles::default();
        for cmd in &sig.commands {
            let lower = cmd.name.to_ascii_lowercase();
            for (role, names) in ALIASES {
                if names.contains(&lower.as_str()) {
                    let slot = match role {
                        Role::Ping => &mut roles.ping,
                        Role::Pong => &mut roles.pong,
                        Role::GetPeers => &mut roles.get_peers,
                        Role::Peers => &mut roles.peers,
                        Role::Announce => &mut roles.announce,
                        Role::Poll => &mut roles.poll,
                        Role::Command => &mut roles.command,
                    };
                    slot.get_or_insert(cmd.opcode);
                }
            }
        }
        roles
    }

    pub fn role_of(&self, opcode: u8) -> Option<Role> {
        [
            (self.ping, Role::Ping),
            (self.pong, Role::Pong),
            (self.get_peers, Role::GetPeers),
            (self.peers, Role::Peers),
            (self.announce, Role::Announce),
            (self.poll, Role::Poll),
            (self.command, Role::Command),
        ]
        .into_iter()
        .find_map(|(slot, role)| (slot == Some(opcode)).then_some(role))
    }

    /// Roles a simulated world needs to run the overlay at all.
    pub fn require_overlay(&self, sig: &NetworkSignature) -> Result<(), MissingRole> {
        let missing = |role: &'static str| MissingRole {
            network_id: sig.network_id.clone(),
            role,
        };
        self.ping.ok_or(missing("ping"))?;
        self.pong.ok_or(missing("pong"))?;
        self.get_peers.ok_or(missing("get_peers"))?;
        self.peers.ok_or(missing("peers"))?;
        self.command.ok_or(missing("command"))?;
        if sig.cnc_style == CncStyle::Pull {
            self.poll.ok_or(missing("poll"))?;
        }
        Ok(())
    }
}

/// Builds an outbound request for `opcode`: node_id fields carry the sender,
/// numeric fields are nonces from the caller's RNG, the rest are empty.
pub fn build_request(
    sig: &NetworkSignature,
    opcode: u8,
    self_id: NodeId,
    rng: &mut ChaCha8Rng,
) -> Message {
    let format = sig.command(opcode).expect("role opcode exists");
    let fields = format
        .fields
        .iter()
        .map(|spec| match spec.kind() {
            FieldKind::U32 => FieldValue::U32(rng.random()),
            FieldKind::U64 => FieldValue::U64(rng.random()),
            FieldKind::Bytes => FieldValue::Bytes(Vec::new()),
            FieldKind::NodeId => FieldValue::NodeId(self_id),
            FieldKind::EndpointList => FieldValue::Endpoints(Vec::new()),
        })
        .collect();
    Message::new(opcode, fields)
}

/// Builds a reply: node_id fields carry the responder, numeric fields echo
/// the request's first value of the same kind (nonce echo), endpoint lists
/// carry `endpoints`, byte strings stay empty.
pub fn build_reply(
    sig: &NetworkSignature,
    opcode: u8,
    self_id: NodeId,
    request: &Message,
    endpoints: &[Endpoint],
) -> Message {
    let format = sig.command(opcode).expect("role opcode exists");
    let fields = format
        .fields
        .iter()
        .map(|spec| match spec.kind() {
            FieldKind::U32 => FieldValue::U32(request.first_u32().unwrap_or(0)),
            FieldKind::U64 => FieldValue::U64(request.first_u64().unwrap_or(0)),
            FieldKind::Bytes => FieldValue::Bytes(Vec::new()),
            FieldKind::NodeId => FieldValue::NodeId(self_id),
            FieldKind::EndpointList => FieldValue::Endpoints(endpoints.to_vec()),
        })
        .collect();
    Message::new(opcode, fields)
}

/// Builds a command message: byte-string fields are key then payload in
/// declared order, the first u64 is the injection sequence number.
pub fn build_command(
    sig: &NetworkSignature,
    opcode: u8,
    key: &[u8],
    seq: u64,
    payload: &[u8],
) -> Message {
    let format = sig.command(opcode).expect("command opcode exists");
    let mut bytes_seen = 0;
    let mut u64_seen = false;
    let fields = format
        .fields
        .iter()
        .map(|spec| match spec.kind() {
            FieldKind::U32 => FieldValue::U32(0),
            FieldKind::U64 => {
                let v = if u64_seen { 0 } else { seq };
                u64_seen = true;
                FieldValue::U64(v)
            }
            FieldKind::Bytes => {
                let v = match bytes_seen {
                    0 => key.to_vec(),
                    1 => payload.to_vec(),
                    _ => Vec::new(),
                };
                bytes_seen += 1;
                FieldValue::Bytes(v)
            }
            FieldKind::NodeId => FieldValue::NodeId(NodeId([0; 20])),
            FieldKind::EndpointList => FieldValue::Endpoints(Vec::new()),
        })
        .collect();
    Message::new(opcode, fields)
}

/// Pulls (key, seq, payload) out of a received command message.
pub fn command_parts(msg: &Message) -> (Vec<u8>, u64, Vec<u8>) {
    let bytes = msg.bytes_fields();
    let key = bytes.first().map(|b| b.to_vec()).unwrap_or_default();
    let payload = bytes.get(1).map(|b| b.to_vec()).unwrap_or_default();
    let seq = msg.first_u64().unwrap_or(0);
    (key, seq, payload)
}
