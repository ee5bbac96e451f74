//! Peer records and the bounded peer table every overlay member maintains.

use serde::{Deserialize, Serialize};

use crate::types::{Endpoint, NodeId, SimTime};

/// How an entry was first learned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeerSource {
    Bootstrap,
    PeerExchange,
    Dht,
    Incoming,
}

/// One observed peer: identity, endpoint, and when we saw it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerRecord {
    pub node_id: NodeId,
    pub endpoint: Endpoint,
    pub first_seen: SimTime,
    pub last_seen: SimTime,
    pub source: PeerSource,
}

impl PeerRecord {
    pub fn observed(node_id: NodeId, endpoint: Endpoint, now: SimTime, source: PeerSource) -> Self {
        PeerRecord {
            node_id,
            endpoint,
            first_seen: now,
            last_seen: now,
            source,
        }
    }
}

/// Bounded list of peer records.
///
/// Update rule: a known node_id refreshes last_seen (and endpoint); a new
/// node_id is inserted; on overflow the stalest last_seen entry is evicted
/// first, ties broken by evicting the larger node_id.
#[derive(Debug, Clone)]
pub struct PeerTable {
    bound: usize,
    entries: Vec<PeerRecord>,
}

impl PeerTable {
    pub fn new(bound: usize) -> Self {
        assert!(bound > 0, "peer table bound must be positive");
        PeerTable {
            bound,
            entries: Vec::new(),
        }
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PeerRecord> {
        self.entries.iter()
    }

    pub fn get(&self, id: NodeId) -> Option<&PeerRecord> {
        self.entries.iter().find(|r| r.node_id == id)
    }

    pub fn contains_endpoint(&self, ep: Endpoint) -> bool {
        self.entries.iter().any(|r| r.endpoint == ep)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<PeerRecord> {
        let pos = self.entries.iter().position(|r| r.node_id == id)?;
        Some(self.entries.remove(pos))
    }

    /// Applies one observation and returns any evicted records.
    pub fn upsert(&mut self, observation: PeerRecord) -> Vec<PeerRecord> {
        if let Some(existing) = self
            .entries
            .iter_mut()
            .find(|r| r.node_id == observation.node_id)
        {
            existing.last_seen = existing.last_seen.max(observation.last_seen);
            existing.endpoint = observation.endpoint;
            return Vec::new();
        }
        let mut evicted = Vec::new();
        while self.entries.len() >= self.bound {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .min_by_key(|(_, r)| (r.last_seen, std::cmp::Reverse(r.node_id)))
                .map(|(i, _)| i)
                .expect("nonempty table");
            evicted.push(self.entries.remove(victim));
        }
        self.entries.push(observation);
        evicted
    }
}
