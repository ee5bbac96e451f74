//! Declarative network signatures: the command formats and operating
//! parameters that describe a P2P overlay well enough to emulate a regular
//! node on it.
//!
//! A signature travels as a UTF-8 JSON document under the top-level key
//! `p2pforge_signature_v1`. The canonical serialization (keys sorted
//! lexicographically, no insignificant whitespace, integers unpadded) is
//! what gets digested with SHA-512, so evidence bags can bind to the exact
//! protocol version that produced them.

mod registry;

pub use registry::{ImportError, ImportReport, RegistryEntry, RegistryError, SignatureRegistry};

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};
use thiserror::Error;

use crate::types::Endpoint;

/// Top-level key of a signature document.
pub const DOCUMENT_KEY: &str = "p2pforge_signature_v1";

/// Opcode 0x00 is reserved as a sentinel and never assigned to a command.
pub const RESERVED_OPCODE: u8 = 0x00;

/// Protocol version triple, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Version(pub u32, pub u32, pub u32);

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.0, self.1, self.2)
    }
}

/// How a new node finds its first live contacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bootstrap {
    HardcodedPeers { endpoints: Vec<Endpoint> },
    BootstrapServers { endpoints: Vec<Endpoint> },
    None,
}

impl Bootstrap {
    pub fn endpoints(&self) -> &[Endpoint] {
        match self {
            Bootstrap::HardcodedPeers { endpoints } | Bootstrap::BootstrapServers { endpoints } => {
                endpoints
            }
            Bootstrap::None => &[],
        }
    }
}

/// Whether the overlay contains legitimate peers alongside bots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    BotsOnly,
    Mixed,
}

/// Command-and-control delivery style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CncStyle {
    Pull,
    Push,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discovery {
    pub dht_enabled: bool,
    pub peer_exchange_enabled: bool,
}

/// Communication frequencies, in sim-time units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub ping_interval: u64,
    pub peer_exchange_interval: u64,
    /// Only meaningful for pull-style networks; 0 when unused.
    #[serde(default)]
    pub command_poll_interval: u64,
}

/// Kinds a command field can take on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    U32,
    U64,
    Bytes,
    NodeId,
    EndpointList,
}

impl FieldKind {
    pub const ALL: [&'static str; 5] = ["u32", "u64", "bytes", "node_id", "endpoint_list"];
}

/// A named, typed field of a command. Serializes as `[name, kind]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec(pub String, pub FieldKind);

impl FieldSpec {
    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn kind(&self) -> FieldKind {
        self.1
    }
}

/// Wire format of one protocol command.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandFormat {
    pub name: String,
    pub opcode: u8,
    pub fields: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expects_response: Option<u8>,
}

/// Complete declarative description of a P2P network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSignature {
    pub network_id: String,
    pub version: Version,
    pub bootstrap: Bootstrap,
    pub membership: Membership,
    pub cnc_style: CncStyle,
    pub discovery: Discovery,
    pub timing: Timing,
    pub commands: Vec<CommandFormat>,
}

impl NetworkSignature {
    pub fn command(&self, opcode: u8) -> Option<&CommandFormat> {
        self.commands.iter().find(|c| c.opcode == opcode)
    }

    pub fn command_named(&self, name: &str) -> Option<&CommandFormat> {
        self.commands.iter().find(|c| c.name == name)
    }
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyNetworkId,
    ReservedOpcode { command: String },
    DuplicateOpcode { opcode: u8 },
    DuplicateFieldName { command: String, field: String },
    DanglingResponseOpcode { command: String, response: u8 },
    PollIntervalMissing,
    ParasiteRequiresMixed,
    UnjoinableNetwork,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyNetworkId => write!(f, "EmptyNetworkId: network_id must be nonempty"),
            Violation::ReservedOpcode { command } => {
                write!(
                    f,
                    "ReservedOpcode: command `{command}` uses reserved opcode 0x00"
                )
            }
            Violation::DuplicateOpcode { opcode } => {
                write!(
                    f,
                    "DuplicateOpcode: opcode 0x{opcode:02x} used by more than one command"
                )
            }
            Violation::DuplicateFieldName { command, field } => write!(
                f,
                "DuplicateFieldName: command `{command}` declares field `{field}` twice"
            ),
            Violation::DanglingResponseOpcode { command, response } => write!(
                f,
                "DanglingResponseOpcode: command `{command}` expects reply 0x{response:02x} which is not defined"
            ),
            Violation::PollIntervalMissing => {
                write!(
                    f,
                    "PollIntervalMissing: pull networks need command_poll_interval > 0"
                )
            }
            Violation::ParasiteRequiresMixed => write!(
                f,
                "ParasiteRequiresMixed: bootstrap `none` is only legal with mixed membership"
            ),
            Violation::UnjoinableNetwork => write!(
                f,
                "UnjoinableNetwork: no DHT, no peer exchange and no bootstrap path"
            ),
        }
    }
}

/// Errors from [`parse_signature`].
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("unknown field kind `{0}`")]
    UnknownFieldKind(String),
    #[error("duplicate opcode 0x{0:02x}")]
    DuplicateOpcode(u8),
    #[error("command `{command}` expects undefined reply opcode 0x{response:02x}")]
    DanglingResponseOpcode { command: String, response: u8 },
    #[error("unjoinable network: all discovery paths disabled")]
    UnjoinableNetwork,
    #[error("invalid signature: {}", format_violations(.0))]
    InvalidSignature(Vec<Violation>),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every type invariant. An empty list means the signature is valid.
pub fn validate(sig: &NetworkSignature) -> Vec<Violation> {
    let mut out = Vec::new();
    if sig.network_id.is_empty() {
        out.push(Violation::EmptyNetworkId);
    }
    let mut seen = BTreeSet::new();
    let mut dup = BTreeSet::new();
    for cmd in &sig.commands {
        if cmd.opcode == RESERVED_OPCODE {
            out.push(Violation::ReservedOpcode {
                command: cmd.name.clone(),
            });
        }
        if !seen.insert(cmd.opcode) && dup.insert(cmd.opcode) {
            out.push(Violation::DuplicateOpcode { opcode: cmd.opcode });
        }
        let mut names = BTreeSet::new();
        for field in &cmd.fields {
            if !names.insert(field.name()) {
                out.push(Violation::DuplicateFieldName {
                    command: cmd.name.clone(),
                    field: field.name().to_string(),
                });
            }
        }
        if let Some(resp) = cmd.expects_response
            && sig.command(resp).is_none()
        {
            out.push(Violation::DanglingResponseOpcode {
                command: cmd.name.clone(),
                response: resp,
            });
        }
    }
    if sig.cnc_style == CncStyle::Pull && sig.timing.command_poll_interval == 0 {
        out.push(Violation::PollIntervalMissing);
    }
    if sig.bootstrap == Bootstrap::None && sig.membership == Membership::BotsOnly {
        out.push(Violation::ParasiteRequiresMixed);
    }
    let joinable = sig.discovery.dht_enabled
        || sig.discovery.peer_exchange_enabled
        || sig.bootstrap != Bootstrap::None;
    if !joinable {
        out.push(Violation::UnjoinableNetwork);
    }
    out
}

/// Parses a signature document and enforces every invariant, so callers only
/// ever see well-formed signatures.
pub fn parse_signature(text: &str) -> Result<NetworkSignature, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| ParseError::MalformedDocument(e.to_string()))?;
    let inner = value.get(DOCUMENT_KEY).ok_or_else(|| {
        ParseError::MalformedDocument(format!("missing top-level key `{DOCUMENT_KEY}`"))
    })?;

    // Field kinds are scanned up front so schema typos surface as a typed
    // error instead of a generic serde message.
    if let Some(commands) = inner.get("commands").and_then(|c| c.as_array()) {
        for cmd in commands {
            let Some(fields) = cmd.get("fields").and_then(|f| f.as_array()) else {
                continue;
            };
            for field in fields {
                if let Some(kind) = field.get(1).and_then(|k| k.as_str())
                    && !FieldKind::ALL.contains(&kind)
                {
                    return Err(ParseError::UnknownFieldKind(kind.to_string()));
                }
            }
        }
    }

    let sig: NetworkSignature = serde_json::from_value(inner.clone())
        .map_err(|e| ParseError::MalformedDocument(e.to_string()))?;

    let violations = validate(&sig);
    if violations.is_empty() {
        return Ok(sig);
    }
    for v in &violations {
        match v {
            Violation::DuplicateOpcode { opcode } => {
                return Err(ParseError::DuplicateOpcode(*opcode));
            }
            Violation::DanglingResponseOpcode { command, response } => {
                return Err(ParseError::DanglingResponseOpcode {
                    command: command.clone(),
                    response: *response,
                });
            }
            Violation::UnjoinableNetwork => return Err(ParseError::UnjoinableNetwork),
            _ => {}
        }
    }
    Err(ParseError::InvalidSignature(violations))
}

/// Canonical document bytes: envelope-wrapped, keys sorted, compact.
///
/// serde_json's `Value` maps are BTree-backed, so re-serializing through a
/// `Value` yields lexicographically sorted keys with no whitespace.
pub fn canonical_document(sig: &NetworkSignature) -> Vec<u8> {
    let mut doc = serde_json::Map::new();
    doc.insert(
        DOCUMENT_KEY.to_string(),
        serde_json::to_value(sig).expect("signature serializes"),
    );
    serde_json::to_string(&serde_json::Value::Object(doc))
        .expect("canonical document serializes")
        .into_bytes()
}

/// SHA-512 over the canonical serialization.
pub fn digest(sig: &NetworkSignature) -> [u8; 64] {
    sha512(&canonical_document(sig))
}

pub(crate) fn sha512(bytes: &[u8]) -> [u8; 64] {
    let mut hasher = Sha512::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    let mut digest = [0u8; 64];
    digest.copy_from_slice(&out);
    digest
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn minimal_document_parses() {
        let doc = r#"{"p2pforge_signature_v1": {
            "network_id": "tiny",
            "version": [0, 1, 0],
            "bootstrap": {"kind": "hardcoded_peers", "endpoints": ["10.0.0.1:9000"]},
            "membership": "bots_only",
            "cnc_style": "push",
            "discovery": {"dht_enabled": false, "peer_exchange_enabled": false},
            "timing": {"ping_interval": 10, "peer_exchange_interval": 30},
            "commands": [{"name": "ping", "opcode": 1, "fields": []}]
        }}"#;
        let sig = parse_signature(doc).unwrap();
        assert_eq!(sig.commands.len(), 1);
        assert_eq!(sig.network_id, "tiny");
        assert!(validate(&sig).is_empty());
    }

    #[test]
    fn bot_only_profile_parses() {
        // Table-1 "bot-only" column: bootstrap required, only bots, pull or push.
        let doc = r#"{"p2pforge_signature_v1": {
            "network_id": "botsonly-pull",
            "version": [1, 0, 0],
            "bootstrap": {"kind": "bootstrap_servers", "endpoints": ["10.9.9.9:7000"]},
            "membership": "bots_only",
            "cnc_style": "pull",
            "discovery": {"dht_enabled": false, "peer_exchange_enabled": true},
            "timing": {"ping_interval": 10, "peer_exchange_interval": 30, "command_poll_interval": 50},
            "commands": [{"name": "ping", "opcode": 1, "fields": []}]
        }}"#;
        let sig = parse_signature(doc).unwrap();
        assert_eq!(sig.membership, Membership::BotsOnly);
        assert_eq!(sig.cnc_style, CncStyle::Pull);
    }

    #[test]
    fn duplicate_opcode_rejected() {
        let doc = r#"{"p2pforge_signature_v1": {
            "network_id": "dup",
            "version": [0, 1, 0],
            "bootstrap": {"kind": "hardcoded_peers", "endpoints": ["10.0.0.1:9000"]},
            "membership": "bots_only",
            "cnc_style": "push",
            "discovery": {"dht_enabled": false, "peer_exchange_enabled": false},
            "timing": {"ping_interval": 10, "peer_exchange_interval": 30},
            "commands": [
                {"name": "a", "opcode": 1, "fields": []},
                {"name": "b", "opcode": 1, "fields": []}
            ]
        }}"#;
        match parse_signature(doc) {
            Err(ParseError::DuplicateOpcode(0x01)) => {}
            other => panic!("expected DuplicateOpcode, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_kind_rejected() {
        let doc = r#"{"p2pforge_signature_v1": {
            "network_id": "weird",
            "version": [0, 1, 0],
            "bootstrap": {"kind": "hardcoded_peers", "endpoints": ["10.0.0.1:9000"]},
            "membership": "bots_only",
            "cnc_style": "push",
            "discovery": {"dht_enabled": false, "peer_exchange_enabled": false},
            "timing": {"ping_interval": 10, "peer_exchange_interval": 30},
            "commands": [{"name": "x", "opcode": 1, "fields": [["blob", "f128"]]}]
        }}"#;
        match parse_signature(doc) {
            Err(ParseError::UnknownFieldKind(k)) => assert_eq!(k, "f128"),
            other => panic!("expected UnknownFieldKind, got {other:?}"),
        }
    }

    #[test]
    fn dangling_response_rejected() {
        let mut sig = presets::push_signature();
        sig.commands[0].expects_response = Some(0x7f);
        let doc = String::from_utf8(canonical_document(&sig)).unwrap();
        assert!(matches!(
            parse_signature(&doc),
            Err(ParseError::DanglingResponseOpcode { response: 0x7f, .. })
        ));
    }

    #[test]
    fn validate_flags_poll_interval_and_parasite_rules() {
        let mut sig = presets::push_signature();
        sig.cnc_style = CncStyle::Pull;
        sig.timing.command_poll_interval = 0;
        assert!(validate(&sig).contains(&Violation::PollIntervalMissing));

        let mut sig = presets::push_signature();
        sig.bootstrap = Bootstrap::None;
        sig.membership = Membership::BotsOnly;
        assert!(validate(&sig).contains(&Violation::ParasiteRequiresMixed));

        let mut sig = presets::push_signature();
        sig.commands[0].opcode = 0x00;
        sig.commands[0].expects_response = None;
        let violations = validate(&sig);
        assert!(
            violations
                .iter()
                .any(|v| matches!(v, Violation::ReservedOpcode { .. }))
        );

        let sig = presets::push_signature();
        assert!(validate(&sig).is_empty());
    }

    #[test]
    fn unjoinable_network_rejected() {
        let mut sig = presets::push_signature();
        sig.bootstrap = Bootstrap::None;
        sig.membership = Membership::Mixed;
        sig.discovery = Discovery {
            dht_enabled: false,
            peer_exchange_enabled: false,
        };
        let doc = String::from_utf8(canonical_document(&sig)).unwrap();
        assert!(matches!(
            parse_signature(&doc),
            Err(ParseError::UnjoinableNetwork)
        ));
    }

    #[test]
    fn digest_is_deterministic_and_sensitive() {
        let sig = presets::push_signature();
        assert_eq!(digest(&sig), digest(&sig));

        let mut other = sig.clone();
        other.timing.ping_interval += 1;
        assert_ne!(digest(&sig), digest(&other));
    }

    #[test]
    fn digest_stable_across_key_reordering() {
        let sig = presets::push_signature();
        let canonical = String::from_utf8(canonical_document(&sig)).unwrap();
        // Reparse from a pretty-printed (differently ordered / spaced) text.
        let value: serde_json::Value = serde_json::from_str(&canonical).unwrap();
        let pretty = serde_json::to_string_pretty(&value).unwrap();
        let reparsed = parse_signature(&pretty).unwrap();
        assert_eq!(digest(&sig), digest(&reparsed));
    }

    #[test]
    fn canonical_keys_are_sorted() {
        let sig = presets::push_signature();
        let doc = String::from_utf8(canonical_document(&sig)).unwrap();
        let bootstrap = doc.find("\"bootstrap\"").unwrap();
        let commands = doc.find("\"commands\"").unwrap();
        let version = doc.find("\"version\"").unwrap();
        assert!(bootstrap < commands && commands < version);
        assert!(!doc.contains(": "), "canonical form must be compact");
    }
}
