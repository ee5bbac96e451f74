//! Append-only event log: joins, leaves, messages, address reassignments.
//!
//! Exports as newline-delimited `time TAB kind TAB payload…` records so
//! replay-oracle tooling can fold the history independently of the world's
//! own bookkeeping.

use crate::types::{Endpoint, NodeId, SimTime};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Join {
        node: NodeId,
    },
    Leave {
        node: NodeId,
    },
    Reassign {
        node: NodeId,
        old: Endpoint,
        new: Endpoint,
    },
    Msg {
        src: Endpoint,
        dst: Endpoint,
        bytes: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventRecord {
    pub time: SimTime,
    pub kind: EventKind,
}

impl EventRecord {
    pub fn tsv(&self) -> String {
        match &self.kind {
            EventKind::Join { node } => format!("{}\tjoin\t{}", self.time, node),
            EventKind::Leave { node } => format!("{}\tleave\t{}", self.time, node),
            EventKind::Reassign { node, old, new } => {
                format!("{}\treassign\t{}\t{}\t{}", self.time, node, old, new)
            }
            EventKind::Msg { src, dst, bytes } => {
                format!(
                    "{}\tmsg\t{}\t{}\t{}",
                    self.time,
                    src,
                    dst,
                    hex::encode(bytes)
                )
            }
        }
    }
}

pub fn export_log(log: &[EventRecord]) -> String {
    let mut out = String::new();
    for record in log {
        out.push_str(&record.tsv());
        out.push('\n');
    }
    out
}
