//! Verified chunk transfer with retransmit-on-mismatch.
//!
//! The sender ships the bag prelude and trailer (which carries the chunk
//! index) first, then streams each chunk. The sink hashes every chunk as it
//! lands, compares against the index, and acknowledges match or mismatch;
//! the sender also cross-checks the acknowledged hash against what it sent.
//! A mismatched chunk is re-queued immediately, up to the retry limit. A
//! completed transfer leaves the sink holding a byte-identical bag that
//! passes verification.
//!
//! Loopback wire framing (tests and tooling):
//! `CHUNK chunk_no length` then the raw bytes, answered by
//! `ACK chunk_no OK|BAD sha512-hex`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha512};
use thiserror::Error;

use super::bag::{BagError, SEAL_MARKER, parse_bag};

pub const RETRY_LIMIT: u32 = 5;

#[derive(Debug, Error)]
#[error("sink failure: {0}")]
pub struct SinkError(pub String);

/// Receipt acknowledgement: the sink's verdict and the hash it computed
/// over what it actually stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkAck {
    pub chunk_no: u32,
    pub ok: bool,
    pub sha512: [u8; 64],
}

/// Receiving side of a transfer.
pub trait ChunkSink {
    /// Delivers the bag prelude and trailer; the trailer carries the chunk
    /// index the sink verifies against.
    fn begin(&mut self, prelude: &[u8], trailer: &[u8]) -> Result<(), SinkError>;
    /// Stores a chunk (replacing any earlier delivery), hashes the stored
    /// bytes, and acknowledges match/mismatch against the index.
    fn chunk(&mut self, chunk_no: u32, bytes: &[u8]) -> Result<ChunkAck, SinkError>;
    fn finish(&mut self) -> Result<(), SinkError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferAttempt {
    pub chunk_no: u32,
    pub attempt: u32,
    pub ack: [u8; 64],
    pub ok: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TransferLog {
    pub attempts: Vec<TransferAttempt>,
}

impl TransferLog {
    pub fn attempts_for(&self, chunk_no: u32) -> usize {
        self.attempts
            .iter()
            .filter(|a| a.chunk_no == chunk_no)
            .count()
    }
}

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("chunk {chunk_no} still mismatched after {RETRY_LIMIT} attempts")]
    RetryLimitExceeded { chunk_no: u32, log: TransferLog },
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Bag(#[from] BagError),
}

/// Streams a sealed bag into a sink.
pub fn transfer(bag_bytes: &[u8], sink: &mut dyn ChunkSink) -> Result<TransferLog, TransferError> {
    let structure = parse_bag(bag_bytes)?;
    let mut log = TransferLog::default();
    sink.begin(
        &bag_bytes[..structure.records_start as usize],
        &bag_bytes[structure.records_end as usize..],
    )?;
    let region = &bag_bytes[structure.records_start as usize..structure.records_end as usize];
    for entry in &structure.chunk_index {
        let chunk = &region[entry.offset as usize..(entry.offset + entry.length as u64) as usize];
        let mut hasher = Sha512::new();
        hasher.update(chunk);
        let sent_hash: [u8; 64] = hasher.finalize().into();

        let mut delivered = false;
        for attempt in 1..=RETRY_LIMIT {
            let ack = sink.chunk(entry.chunk_no, chunk)?;
            let ok = ack.ok && ack.sha512 == sent_hash;
            log.attempts.push(TransferAttempt {
                chunk_no: entry.chunk_no,
                attempt,
                ack: ack.sha512,
                ok,
            });
            if ok {
                delivered = true;
                break;
            }
        }
        if !delivered {
            return Err(TransferError::RetryLimitExceeded {
                chunk_no: entry.chunk_no,
                log,
            });
        }
    }
    sink.finish()?;
    Ok(log)
}

/// Expected chunk hashes, parsed out of a bag trailer.
pub fn trailer_chunk_hashes(trailer: &[u8]) -> Result<BTreeMap<u32, [u8; 64]>, SinkError> {
    if trailer.len() < 12 {
        return Err(SinkError("trailer too short".into()));
    }
    let marker = u64::from_be_bytes(trailer[..8].try_into().unwrap());
    if marker != SEAL_MARKER {
        return Err(SinkError("trailer missing seal marker".into()));
    }
    let count = u32::from_be_bytes(trailer[8..12].try_into().unwrap()) as usize;
    let entry_len = 4 + 8 + 4 + 64;
    if trailer.len() < 12 + count * entry_len {
        return Err(SinkError("trailer index truncated".into()));
    }
    let mut hashes = BTreeMap::new();
    for i in 0..count {
        let base = 12 + i * entry_len;
        let chunk_no = u32::from_be_bytes(trailer[base..base + 4].try_into().unwrap());
        let mut hash = [0u8; 64];
        hash.copy_from_slice(&trailer[base + 16..base + 80]);
        hashes.insert(chunk_no, hash);
    }
    Ok(hashes)
}

/// What a fault-injecting sink does to incoming chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPlan {
    None,
    /// Corrupt the first delivery of every chunk; retransmissions land clean.
    CorruptFirstDelivery,
    /// Corrupt every delivery of one chunk, exhausting the retry budget.
    CorruptAlways {
        chunk_no: u32,
    },
}

/// In-memory sink, with optional fault injection for exercising the
/// retransmit path.
pub struct MemorySink {
    fault: FaultPlan,
    prelude: Vec<u8>,
    trailer: Vec<u8>,
    expected: BTreeMap<u32, [u8; 64]>,
    chunks: BTreeMap<u32, Vec<u8>>,
    deliveries: BTreeMap<u32, u32>,
    finished: bool,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::with_fault(FaultPlan::None)
    }

    pub fn with_fault(fault: FaultPlan) -> Self {
        MemorySink {
            fault,
            prelude: Vec::new(),
            trailer: Vec::new(),
            expected: BTreeMap::new(),
            chunks: BTreeMap::new(),
            deliveries: BTreeMap::new(),
            finished: false,
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// The received bag, reassembled.
    pub fn assembled(&self) -> Vec<u8> {
        let mut out = self.prelude.clone();
        for chunk in self.chunks.values() {
            out.extend_from_slice(chunk);
        }
        out.extend_from_slice(&self.trailer);
        out
    }
}

impl Default for MemorySink {
    fn default() -> Self {
        Self::new()
    }
}

impl ChunkSink for MemorySink {
    fn begin(&mut self, prelude: &[u8], trailer: &[u8]) -> Result<(), SinkError> {
        self.prelude = prelude.to_vec();
        self.trailer = trailer.to_vec();
        self.expected = trailer_chunk_hashes(trailer)?;
        Ok(())
    }

    fn chunk(&mut self, chunk_no: u32, bytes: &[u8]) -> Result<ChunkAck, SinkError> {
        let delivery = {
            let d = self.deliveries.entry(chunk_no).or_insert(0);
            *d += 1;
            *d
        };
        let mut stored = bytes.to_vec();
        let corrupt = match self.fault {
            FaultPlan::None => false,
            FaultPlan::CorruptFirstDelivery => delivery == 1,
            FaultPlan::CorruptAlways { chunk_no: victim } => chunk_no == victim,
        };
        if corrupt && !stored.is_empty() {
            let mid = stored.len() / 2;
            stored[mid] ^= 0xff;
        }
        let mut hasher = Sha512::new();
        hasher.update(&stored);
        let sha512: [u8; 64] = hasher.finalize().into();
        let ok = self.expected.get(&chunk_no) == Some(&sha512);
        self.chunks.insert(chunk_no, stored);
        Ok(ChunkAck {
            chunk_no,
            ok,
            sha512,
        })
    }

    fn finish(&mut self) -> Result<(), SinkError> {
        self.finished = true;
        Ok(())
    }
}

/// Sink that lands the received bag in a file when the transfer finishes.
pub struct FileSink {
    path: PathBuf,
    inner: MemorySink,
}

impl FileSink {
    pub fn new(path: &Path) -> Self {
        FileSink {
            path: path.to_path_buf(),
            inner: MemorySink::new(),
        }
    }
}

impl ChunkSink for FileSink {
    fn begin(&mut self, prelude: &[u8], trailer: &[u8]) -> Result<(), SinkError> {
        self.inner.begin(prelude, trailer)
    }

    fn chunk(&mut self, chunk_no: u32, bytes: &[u8]) -> Result<ChunkAck, SinkError> {
        self.inner.chunk(chunk_no, bytes)
    }

    fn finish(&mut self) -> Result<(), SinkError> {
        self.inner.finish()?;
        std::fs::write(&self.path, self.inner.assembled())
            .map_err(|e| SinkError(format!("write {}: {e}", self.path.display())))
    }
}

// ---- loopback wire framing ---------------------------------------------------

pub fn chunk_frame(chunk_no: u32, length: usize) -> String {
    format!("CHUNK {chunk_no} {length}\n")
}

pub fn parse_chunk_frame(line: &str) -> Option<(u32, usize)> {
    let mut parts = line.trim_end().split(' ');
    if parts.next()? != "CHUNK" {
        return None;
    }
    let chunk_no = parts.next()?.parse().ok()?;
    let length = parts.next()?.parse().ok()?;
    Some((chunk_no, length))
}

pub fn ack_frame(chunk_no: u32, ok: bool, hash: &[u8; 64]) -> String {
    let verdict = if ok { "OK" } else { "BAD" };
    format!("ACK {chunk_no} {verdict} {}\n", hex::encode(hash))
}

pub fn parse_ack_frame(line: &str) -> Option<ChunkAck> {
    let mut parts = line.trim_end().split(' ');
    if parts.next()? != "ACK" {
        return None;
    }
    let chunk_no = parts.next()?.parse().ok()?;
    let ok = match parts.next()? {
        "OK" => true,
        "BAD" => false,
        _ => return None,
    };
    let hash: [u8; 64] = hex::decode(parts.next()?).ok()?.try_into().ok()?;
    Some(ChunkAck {
        chunk_no,
        ok,
        sha512: hash,
    })
}
