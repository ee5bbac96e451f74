//! Investigation report types and their JSON envelope.

use serde::{Deserialize, Serialize};

use crate::types::SimTime;

pub const REPORT_KEY: &str = "p2pforge_report_v1";

/// What enumeration found: the deduplicated footprint, a liveness estimate,
/// and how much each client contributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationReport {
    /// Node ids (hex), sorted. Dedup key is always the node id, never the
    /// endpoint.
    pub footprint_ids: Vec<String>,
    /// Ids seen within the trailing liveness window at the report's end.
    pub live_estimate: usize,
    /// Distinct endpoints attributed to discovered ids over the whole run.
    pub unique_endpoints: usize,
    /// (client index, ids that client discovered first)
    pub per_client_contribution: Vec<(usize, usize)>,
    pub started: SimTime,
    pub ended: SimTime,
    pub converged: bool,
    pub rounds: u32,
}

impl EnumerationReport {
    pub fn footprint_len(&self) -> usize {
        self.footprint_ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyClass {
    Centralized,
    Decentralized,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedCnc {
    Pull,
    Push,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegreeSummary {
    pub min: usize,
    pub median: usize,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnatomyReport {
    pub topology_class: TopologyClass,
    pub cnc_style_observed: ObservedCnc,
    pub degree_summary: DegreeSummary,
    /// Bag chunk indices holding the command traffic the classification
    /// rests on; empty when no bag was attached.
    pub evidence_refs: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TakeoverReport {
    /// Hex of the injected command payload.
    pub command_issued: String,
    pub executed_count: usize,
    /// Ground truth from the simulator's reachability oracle.
    pub reachable_oracle_count: usize,
    /// Time from injection until 90% of the oracle set had executed.
    pub latency_to_quorum: Option<SimTime>,
}

/// Wraps findings in the stable report envelope. Rendering goes through a
/// `serde_json::Value`, whose maps are BTree-backed, so key order — and the
/// byte output — is deterministic.
pub fn render_report(
    kind: &str,
    config_echo: serde_json::Value,
    signature_digest: &[u8; 64],
    findings: impl Serialize,
) -> String {
    let mut body = serde_json::Map::new();
    body.insert("kind".into(), serde_json::Value::String(kind.into()));
    body.insert("config".into(), config_echo);
    body.insert(
        "signature_digest".into(),
        serde_json::Value::String(hex::encode(signature_digest)),
    );
    body.insert(
        "findings".into(),
        serde_json::to_value(findings).expect("findings serialize"),
    );
    let mut doc = serde_json::Map::new();
    doc.insert(REPORT_KEY.into(), serde_json::Value::Object(body));
    let mut out =
        serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("report serializes");
    out.push('\n');
    out
}
