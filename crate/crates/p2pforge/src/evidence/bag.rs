//! The evidence bag file: an append-only capture container with chunked
//! SHA-512 integrity.
//!
//! Layout, all integers big-endian:
//!
//! ```text
//! magic          "P2PEB\0"                     6 bytes
//! version        u16                           = 1
//! header_len     u32
//! header         JSON (BagHeader)
//! records        frames, see below
//! seal marker    u64::MAX                      (cannot be a record seq)
//! chunk_count    u32
//! chunk index    { chunk_no u32, offset u64, length u32, sha512 64 } × count
//! bag_hash       SHA-512(prelude ++ chunk hashes in order)
//! index_start    u64  absolute offset of the seal marker
//! ```
//!
//! Record frame: `seq u64 | timestamp u64 | direction u8 | src 6 | dst 6 |
//! payload_len u32 | payload`. Chunking runs over the raw record-region byte
//! stream in fixed-size chunks (the last may be short), so a chunk boundary
//! can fall inside a record.
//!
//! Appends hit the file before returning; a crash afterwards never loses a
//! record. An unsealed bag can be recovered: complete frames are kept, a
//! partial tail is truncated, and appending resumes.

use std::fs::{File, OpenOptions};
use std::io::{Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha512};
use thiserror::Error;

use crate::types::{Direction, Endpoint, SimTime};

pub const MAGIC: &[u8; 6] = b"P2PEB\0";
pub const FORMAT_VERSION: u16 = 1;
pub const DEFAULT_CHUNK_SIZE: u32 = 1 << 20;
pub const SEAL_MARKER: u64 = u64::MAX;
const RECORD_FIXED: usize = 8 + 8 + 1 + 6 + 6 + 4;

/// Which clock stamped the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestampClock {
    Sim,
    UtcNanos,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BagHeader {
    pub case_id: String,
    pub investigator: String,
    pub network_id: String,
    /// Digest of the exact signature the evidence was captured against.
    #[serde(with = "digest_hex")]
    pub signature_digest: [u8; 64],
    /// Wall-clock UTC, nanoseconds since the epoch.
    pub created_at_utc_ns: u64,
    pub clock: TimestampClock,
    pub chunk_size: u32,
    /// Free-text context (host state notes and the like).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

mod digest_hex {
    use serde::{Deserialize, Deserializer, Serializer, de::Error as _};

    pub fn serialize<S: Serializer>(v: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s)
            .ok()
            .and_then(|v| <[u8; 64]>::try_from(v).ok())
            .ok_or_else(|| D::Error::custom("expected 128 hex characters"))
    }
}

/// A fully parsed capture record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub seq: u64,
    pub timestamp: SimTime,
    pub direction: Direction,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub payload: Vec<u8>,
}

/// Where an append landed: sequence number plus byte range within the
/// record region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppendReceipt {
    pub seq: u64,
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Error)]
pub enum BagError {
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("header incomplete: {0} is required")]
    HeaderIncomplete(&'static str),
    #[error("bag is sealed")]
    BagSealed,
    #[error("bag is not sealed")]
    NotSealed,
    #[error("not an evidence bag: {0}")]
    Format(String),
    #[error("bag failed verification; verify before replay")]
    VerificationRequired,
}

fn validate_header(header: &BagHeader) -> Result<(), BagError> {
    if header.case_id.is_empty() {
        return Err(BagError::HeaderIncomplete("case_id"));
    }
    if header.investigator.is_empty() {
        return Err(BagError::HeaderIncomplete("investigator"));
    }
    if header.network_id.is_empty() {
        return Err(BagError::HeaderIncomplete("network_id"));
    }
    if header.chunk_size == 0 {
        return Err(BagError::HeaderIncomplete("chunk_size"));
    }
    Ok(())
}

/// Writable evidence bag. Exactly one writer per open bag.
pub struct EvidenceBag {
    file: File,
    path: PathBuf,
    header: BagHeader,
    prelude: Vec<u8>,
    next_seq: u64,
    record_bytes: u64,
    chunk_hashes: Vec<[u8; 64]>,
    current: Sha512,
    sealed: bool,
}

impl EvidenceBag {
    /// Creates the file, writes the prelude, and accepts appends.
    pub fn open(path: &Path, header: BagHeader) -> Result<EvidenceBag, BagError> {
        validate_header(&header)?;
        let header_json = serde_json::to_vec(&serde_json::to_value(&header).expect("header"))
            .expect("header serializes");
        let mut prelude = Vec::with_capacity(12 + header_json.len());
        prelude.extend_from_slice(MAGIC);
        prelude.extend_from_slice(&FORMAT_VERSION.to_be_bytes());
        prelude.extend_from_slice(&(header_json.len() as u32).to_be_bytes());
        prelude.extend_from_slice(&header_json);

        let mut file = OpenOptions::new()
            .create(true)
            .truncate(true)
            .read(true)
            .write(true)
            .open(path)?;
        file.write_all(&prelude)?;
        Ok(EvidenceBag {
            file,
            path: path.to_path_buf(),
            header,
            prelude,
            next_seq: 0,
            record_bytes: 0,
            chunk_hashes: Vec::new(),
            current: Sha512::new(),
            sealed: false,
        })
    }

    /// Reopens an unsealed bag for appending. Complete frames survive; a
    /// partial tail (crash mid-append) is truncated away. Reopening a sealed
    /// bag is refused.
    pub fn recover(path: &Path) -> Result<EvidenceBag, BagError> {
        let bytes = std::fs::read(path)?;
        let prelude = parse_prelude(&bytes)?;
        let records_start = prelude.len() as u64;
        let mut next_seq = 0u64;
        let mut cursor = records_start as usize;
        loop {
            match frame_at(&bytes, cursor) {
                FrameScan::Complete { seq, next } => {
                    if seq != next_seq {
                        return Err(BagError::Format(format!(
                            "record seq {seq} out of order (expected {next_seq})"
                        )));
                    }
                    next_seq += 1;
                    cursor = next;
                }
                FrameScan::SealMarker => return Err(BagError::BagSealed),
                FrameScan::Partial | FrameScan::End => break,
            }
        }
        let header: BagHeader = serde_json::from_slice(&prelude[12..])
            .map_err(|e| BagError::Format(format!("header json: {e}")))?;
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        file.set_len(cursor as u64)?;
        file.seek(SeekFrom::End(0))?;

        let mut bag = EvidenceBag {
            file,
            path: path.to_path_buf(),
            prelude: prelude.to_vec(),
            next_seq,
            record_bytes: 0,
            chunk_hashes: Vec::new(),
            current: Sha512::new(),
            sealed: false,
            header,
        };
        bag.absorb(&bytes[records_start as usize..cursor]);
        Ok(bag)
    }

    pub fn header(&self) -> &BagHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn record_count(&self) -> u64 {
        self.next_seq
    }

    pub fn record_bytes(&self) -> u64 {
        self.record_bytes
    }

    pub fn chunk_size(&self) -> u32 {
        self.header.chunk_size
    }

    /// Appends one timestamped packet; the record is on disk when this
    /// returns. Returns the assigned sequence number and byte range.
    pub fn append_packet(
        &mut self,
        timestamp: SimTime,
        direction: Direction,
        src: Endpoint,
        dst: Endpoint,
        payload: &[u8],
    ) -> Result<AppendReceipt, BagError> {
        if self.sealed {
            return Err(BagError::BagSealed);
        }
        let seq = self.next_seq;
        let mut frame = Vec::with_capacity(RECORD_FIXED + payload.len());
        frame.extend_from_slice(&seq.to_be_bytes());
        frame.extend_from_slice(&timestamp.to_be_bytes());
        frame.push(direction.to_wire());
        frame.extend_from_slice(&src.to_wire());
        frame.extend_from_slice(&dst.to_wire());
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.extend_from_slice(payload);

        let offset = self.record_bytes;
        self.file.write_all(&frame)?;
        self.next_seq += 1;
        self.absorb(&frame);
        Ok(AppendReceipt {
            seq,
            offset,
            len: frame.len() as u64,
        })
    }

    fn absorb(&mut self, mut data: &[u8]) {
        let chunk = self.header.chunk_size as u64;
        while !data.is_empty() {
            let fill = self.record_bytes % chunk;
            let room = (chunk - fill) as usize;
            let take = room.min(data.len());
            self.current.update(&data[..take]);
            self.record_bytes += take as u64;
            data = &data[take..];
            if self.record_bytes.is_multiple_of(chunk) {
                let hasher = std::mem::replace(&mut self.current, Sha512::new());
                self.chunk_hashes.push(finish(hasher));
            }
        }
    }

    /// Splits the record stream into chunks, writes the index and bag hash,
    /// and freezes the bag. Returns the bag hash.
    pub fn seal(&mut self) -> Result<[u8; 64], BagError> {
        if self.sealed {
            return Err(BagError::BagSealed);
        }
        let chunk = self.header.chunk_size as u64;
        let mut hashes = self.chunk_hashes.clone();
        if !self.record_bytes.is_multiple_of(chunk) {
            let hasher = std::mem::replace(&mut self.current, Sha512::new());
            hashes.push(finish(hasher));
        }

        let mut bag_hasher = Sha512::new();
        bag_hasher.update(&self.prelude);
        for h in &hashes {
            bag_hasher.update(h);
        }
        let bag_hash = finish(bag_hasher);

        let index_start = self.prelude.len() as u64 + self.record_bytes;
        let mut trailer = Vec::new();
        trailer.extend_from_slice(&SEAL_MARKER.to_be_bytes());
        trailer.extend_from_slice(&(hashes.len() as u32).to_be_bytes());
        for (no, hash) in hashes.iter().enumerate() {
            let offset = no as u64 * chunk;
            let length = (self.record_bytes - offset).min(chunk) as u32;
            trailer.extend_from_slice(&(no as u32).to_be_bytes());
            trailer.extend_from_slice(&offset.to_be_bytes());
            trailer.extend_from_slice(&length.to_be_bytes());
            trailer.extend_from_slice(hash);
        }
        trailer.extend_from_slice(&bag_hash);
        trailer.extend_from_slice(&index_start.to_be_bytes());
        self.file.write_all(&trailer)?;
        self.file.flush()?;
        self.sealed = true;
        Ok(bag_hash)
    }
}

fn finish(hasher: Sha512) -> [u8; 64] {
    let out = hasher.finalize();
    let mut digest = [0u8; 64];
    digest.copy_from_slice(&out);
    digest
}

enum FrameScan {
    Complete { seq: u64, next: usize },
    SealMarker,
    Partial,
    End,
}

fn frame_at(bytes: &[u8], cursor: usize) -> FrameScan {
    if cursor == bytes.len() {
        return FrameScan::End;
    }
    if bytes.len() - cursor < 8 {
        return FrameScan::Partial;
    }
    let seq = u64::from_be_bytes(bytes[cursor..cursor + 8].try_into().unwrap());
    if seq == SEAL_MARKER {
        return FrameScan::SealMarker;
    }
    if bytes.len() - cursor < RECORD_FIXED {
        return FrameScan::Partial;
    }
    let len_off = cursor + RECORD_FIXED - 4;
    let payload_len = u32::from_be_bytes(bytes[len_off..len_off + 4].try_into().unwrap()) as usize;
    let next = cursor + RECORD_FIXED + payload_len;
    if next > bytes.len() {
        return FrameScan::Partial;
    }
    FrameScan::Complete { seq, next }
}

fn parse_prelude(bytes: &[u8]) -> Result<&[u8], BagError> {
    if bytes.len() < 12 || &bytes[..6] != MAGIC {
        return Err(BagError::Format("bad magic".into()));
    }
    let version = u16::from_be_bytes(bytes[6..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(BagError::Format(format!("unsupported version {version}")));
    }
    let header_len = u32::from_be_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(BagError::Format("truncated header".into()));
    }
    Ok(&bytes[..12 + header_len])
}

// ---- read side --------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkIndexEntry {
    pub chunk_no: u32,
    pub offset: u64,
    pub length: u32,
    pub sha512: [u8; 64],
}

/// Structure of a sealed bag, located via the trailer (never by scanning
/// record contents, so damaged records cannot hide the index).
#[derive(Debug, Clone)]
pub struct BagStructure {
    pub header: BagHeader,
    pub records_start: u64,
    /// Offset of the seal marker; the record region is
    /// `[records_start, records_end)`.
    pub records_end: u64,
    pub chunk_index: Vec<ChunkIndexEntry>,
    pub bag_hash: [u8; 64],
}

pub fn parse_bag(bytes: &[u8]) -> Result<BagStructure, BagError> {
    let prelude = parse_prelude(bytes)?;
    let header: BagHeader = serde_json::from_slice(&prelude[12..])
        .map_err(|e| BagError::Format(format!("header json: {e}")))?;
    validate_header(&header)?;
    if bytes.len() < prelude.len() + 8 + 8 {
        return Err(BagError::NotSealed);
    }
    let index_start = u64::from_be_bytes(bytes[bytes.len() - 8..].try_into().unwrap()) as usize;
    if index_start < prelude.len() || index_start + 12 > bytes.len() {
        return Err(BagError::Format("trailer pointer out of range".into()));
    }
    let marker = u64::from_be_bytes(bytes[index_start..index_start + 8].try_into().unwrap());
    if marker != SEAL_MARKER {
        return Err(BagError::Format("seal marker missing".into()));
    }
    let mut cursor = index_start + 8;
    let count = u32::from_be_bytes(bytes[cursor..cursor + 4].try_into().unwrap()) as usize;
    cursor += 4;
    let entry_len = 4 + 8 + 4 + 64;
    if bytes.len() < cursor + count * entry_len + 64 + 8 {
        return Err(BagError::Format("truncated chunk index".into()));
    }
    let mut chunk_index = Vec::with_capacity(count);
    for _ in 0..count {
        let chunk_no = u32::from_be_bytes(bytes[cursor..cursor + 4].try_into().unwrap());
        let offset = u64::from_be_bytes(bytes[cursor + 4..cursor + 12].try_into().unwrap());
        let length = u32::from_be_bytes(bytes[cursor + 12..cursor + 16].try_into().unwrap());
        let mut sha512 = [0u8; 64];
        sha512.copy_from_slice(&bytes[cursor + 16..cursor + 80]);
        chunk_index.push(ChunkIndexEntry {
            chunk_no,
            offset,
            length,
            sha512,
        });
        cursor += entry_len;
    }
    let mut bag_hash = [0u8; 64];
    bag_hash.copy_from_slice(&bytes[cursor..cursor + 64]);
    Ok(BagStructure {
        header,
        records_start: prelude.len() as u64,
        records_end: index_start as u64,
        chunk_index,
        bag_hash,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChunkFailure {
    HashMismatch,
    /// The indexed byte range runs past the record region (truncation or
    /// splicing).
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkResult {
    pub chunk_no: u32,
    pub ok: bool,
    pub failure: Option<ChunkFailure>,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub chunks: Vec<ChunkResult>,
    pub bag_hash_ok: bool,
    pub region_consistent: bool,
    pub pass: bool,
}

/// Recomputes every chunk hash and the bag hash.
pub fn verify(structure: &BagStructure, bytes: &[u8]) -> VerifyReport {
    let region = &bytes[structure.records_start as usize..structure.records_end as usize];
    let mut chunks = Vec::with_capacity(structure.chunk_index.len());
    for entry in &structure.chunk_index {
        let end = entry.offset + entry.length as u64;
        let result = if end > region.len() as u64 {
            ChunkResult {
                chunk_no: entry.chunk_no,
                ok: false,
                failure: Some(ChunkFailure::LengthMismatch),
            }
        } else {
            let slice = &region[entry.offset as usize..end as usize];
            let mut hasher = Sha512::new();
            hasher.update(slice);
            if finish(hasher) == entry.sha512 {
                ChunkResult {
                    chunk_no: entry.chunk_no,
                    ok: true,
                    failure: None,
                }
            } else {
                ChunkResult {
                    chunk_no: entry.chunk_no,
                    ok: false,
                    failure: Some(ChunkFailure::HashMismatch),
                }
            }
        };
        chunks.push(result);
    }
    let mut bag_hasher = Sha512::new();
    bag_hasher.update(&bytes[..structure.records_start as usize]);
    for entry in &structure.chunk_index {
        bag_hasher.update(entry.sha512);
    }
    let bag_hash_ok = finish(bag_hasher) == structure.bag_hash;
    let covered: u64 = structure.chunk_index.iter().map(|e| e.length as u64).sum();
    let region_consistent = covered == structure.records_end - structure.records_start;
    let pass = bag_hash_ok && region_consistent && chunks.iter().all(|c| c.ok);
    VerifyReport {
        chunks,
        bag_hash_ok,
        region_consistent,
        pass,
    }
}

/// Parses and verifies a bag file in one step.
pub fn verify_bytes(bytes: &[u8]) -> Result<VerifyReport, BagError> {
    let structure = parse_bag(bytes)?;
    Ok(verify(&structure, bytes))
}

/// Reads every record of a sealed bag in sequence order.
pub fn read_records(structure: &BagStructure, bytes: &[u8]) -> Result<Vec<PacketRecord>, BagError> {
    let mut records = Vec::new();
    let mut cursor = structure.records_start as usize;
    let end = structure.records_end as usize;
    while cursor < end {
        match frame_at(&bytes[..end], cursor) {
            FrameScan::Complete { seq, next } => {
                let ts_off = cursor + 8;
                let timestamp = u64::from_be_bytes(bytes[ts_off..ts_off + 8].try_into().unwrap());
                let direction = Direction::from_wire(bytes[cursor + 16])
                    .ok_or_else(|| BagError::Format("bad direction byte".into()))?;
                let src = Endpoint::from_wire(&bytes[cursor + 17..cursor + 23]).unwrap();
                let dst = Endpoint::from_wire(&bytes[cursor + 23..cursor + 29]).unwrap();
                let payload = bytes[cursor + RECORD_FIXED..next].to_vec();
                records.push(PacketRecord {
                    seq,
                    timestamp,
                    direction,
                    src,
                    dst,
                    payload,
                });
                cursor = next;
            }
            _ => return Err(BagError::Format("damaged record region".into())),
        }
    }
    Ok(records)
}
