//! Packet-by-packet event reconstruction from a verified bag.

use super::bag::{BagError, PacketRecord, parse_bag, read_records, verify};
use crate::emulator::codec::{self, Message};
use crate::signature::NetworkSignature;
use crate::types::{Direction, Endpoint, SimTime};

/// One replayed packet. `decoded` is present when a signature was supplied
/// and the payload parses against it; foreign or damaged payloads replay as
/// raw bytes and never abort the stream.
#[derive(Debug, Clone)]
pub struct ReplayItem {
    pub seq: u64,
    pub timestamp: SimTime,
    pub direction: Direction,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: Vec<u8>,
    pub decoded: Option<Message>,
}

impl From<(PacketRecord, Option<Message>)> for ReplayItem {
    fn from((record, decoded): (PacketRecord, Option<Message>)) -> Self {
        ReplayItem {
            seq: record.seq,
            timestamp: record.timestamp,
            direction: record.direction,
            src: record.src,
            dst: record.dst,
            payload: record.payload,
            decoded,
        }
    }
}

/// Replays a sealed bag in sequence order. The bag must verify first.
pub fn replay(bytes: &[u8], sig: Option<&NetworkSignature>) -> Result<Vec<ReplayItem>, BagError> {
    let structure = parse_bag(bytes)?;
    if !verify(&structure, bytes).pass {
        return Err(BagError::VerificationRequired);
    }
    let records = read_records(&structure, bytes)?;
    Ok(records
        .into_iter()
        .map(|record| {
            let decoded = sig.and_then(|s| codec::decode(&record.payload, s).ok());
            ReplayItem::from((record, decoded))
        })
        .collect())
}
