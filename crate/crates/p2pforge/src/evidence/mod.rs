//! Tamper-evident evidence storage: append-only timestamped capture bags
//! with chunked SHA-512 integrity, verification, packet replay, and a
//! verified transfer protocol with retransmit-on-mismatch.

mod bag;
mod replay;
pub mod transfer;

pub use bag::{
    AppendReceipt, BagError, BagHeader, BagStructure, ChunkFailure, ChunkIndexEntry, ChunkResult,
    DEFAULT_CHUNK_SIZE, EvidenceBag, FORMAT_VERSION, MAGIC, PacketRecord, SEAL_MARKER,
    TimestampClock, VerifyReport, parse_bag, read_records, verify, verify_bytes,
};
pub use replay::{ReplayItem, replay};
pub use transfer::{
    ChunkAck, ChunkSink, FaultPlan, FileSink, MemorySink, RETRY_LIMIT, SinkError, TransferAttempt,
    TransferError, TransferLog, transfer,
};

use std::cell::RefCell;
use std::rc::Rc;

use crate::emulator::client::{PacketTap, TapRef};
use crate::types::{Direction, Endpoint, SimTime};

/// Single-writer bag handle shared between a controller and the clients
/// tapping their traffic into it. Appends are serialized by construction.
#[derive(Clone)]
pub struct SharedBag(Rc<RefCell<EvidenceBag>>);

impl SharedBag {
    pub fn new(bag: EvidenceBag) -> Self {
        SharedBag(Rc::new(RefCell::new(bag)))
    }

    pub fn with<R>(&self, f: impl FnOnce(&EvidenceBag) -> R) -> R {
        f(&self.0.borrow())
    }

    pub fn with_mut<R>(&self, f: impl FnOnce(&mut EvidenceBag) -> R) -> R {
        f(&mut self.0.borrow_mut())
    }

    pub fn seal(&self) -> Result<[u8; 64], BagError> {
        self.0.borrow_mut().seal()
    }

    /// Consumes the handle; fails when taps still hold clones.
    pub fn into_inner(self) -> Result<EvidenceBag, SharedBag> {
        Rc::try_unwrap(self.0)
            .map(RefCell::into_inner)
            .map_err(SharedBag)
    }
}

impl PacketTap for SharedBag {
    fn record(
        &mut self,
        at: SimTime,
        direction: Direction,
        src: Endpoint,
        dst: Endpoint,
        bytes: &[u8],
    ) -> Option<TapRef> {
        self.0
            .borrow_mut()
            .append_packet(at, direction, src, dst, bytes)
            .ok()
            .map(|receipt| TapRef {
                seq: receipt.seq,
                offset: receipt.offset,
                len: receipt.len,
            })
    }
}
