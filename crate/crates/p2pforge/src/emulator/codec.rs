//! Bit-exact wire codec driven by a network signature.
//!
//! Layout: 1-byte opcode, then the command's fields in declared order.
//!
//! ```text
//! u32            4 bytes big-endian
//! u64            8 bytes big-endian
//! bytes          u16 big-endian length prefix + payload
//! node_id        20 raw bytes
//! endpoint_list  1-byte count, then 6-byte entries (IPv4 octets + port BE)
//! ```
//!
//! Decoding is total: any byte sequence either yields a message conforming
//! to the signature or a typed error. Nothing is silently truncated.

use thiserror::Error;

use crate::signature::{CommandFormat, FieldKind, NetworkSignature};
use crate::types::{Endpoint, NodeId};

/// Messages may not exceed one loopback datagram.
pub const MAX_MESSAGE_LEN: usize = 1200;

/// A decoded field value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    U32(u32),
    U64(u64),
    Bytes(Vec<u8>),
    NodeId(NodeId),
    Endpoints(Vec<Endpoint>),
}

impl FieldValue {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldValue::U32(_) => FieldKind::U32,
            FieldValue::U64(_) => FieldKind::U64,
            FieldValue::Bytes(_) => FieldKind::Bytes,
            FieldValue::NodeId(_) => FieldKind::NodeId,
            FieldValue::Endpoints(_) => FieldKind::EndpointList,
        }
    }
}

/// One protocol message: an opcode plus field values in declared order.
/// Transport metadata (source, destination, timestamp) lives with the
/// transport and capture records, not on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub opcode: u8,
    pub fields: Vec<FieldValue>,
}

impl Message {
    pub fn new(opcode: u8, fields: Vec<FieldValue>) -> Self {
        Message { opcode, fields }
    }

    pub fn first_node_id(&self) -> Option<NodeId> {
        self.fields.iter().find_map(|f| match f {
            FieldValue::NodeId(id) => Some(*id),
            _ => None,
        })
    }

    pub fn first_endpoints(&self) -> Option<&[Endpoint]> {
        self.fields.iter().find_map(|f| match f {
            FieldValue::Endpoints(eps) => Some(eps.as_slice()),
            _ => None,
        })
    }

    pub fn first_u64(&self) -> Option<u64> {
        self.fields.iter().find_map(|f| match f {
            FieldValue::U64(v) => Some(*v),
            _ => None,
        })
    }

    pub fn first_u32(&self) -> Option<u32> {
        self.fields.iter().find_map(|f| match f {
            FieldValue::U32(v) => Some(*v),
            _ => None,
        })
    }

    /// Byte-string fields in declared order.
    pub fn bytes_fields(&self) -> Vec<&[u8]> {
        self.fields
            .iter()
            .filter_map(|f| match f {
                FieldValue::Bytes(b) => Some(b.as_slice()),
                _ => None,
            })
            .collect()
    }

    /// Checks arity and kinds against the signature's format for the opcode.
    pub fn conforms_to(&self, sig: &NetworkSignature) -> bool {
        let Some(format) = sig.command(self.opcode) else {
            return false;
        };
        self.fields.len() == format.fields.len()
            && self
                .fields
                .iter()
                .zip(&format.fields)
                .all(|(value, spec)| value.kind() == spec.kind())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("opcode 0x{0:02x} is not defined by the signature")]
    UnknownOpcode(u8),
    #[error("message has {got} fields, format `{command}` declares {want}")]
    ArityMismatch {
        command: String,
        want: usize,
        got: usize,
    },
    #[error("field {index} of `{command}` must be {want:?}")]
    KindMismatch {
        command: String,
        index: usize,
        want: FieldKind,
    },
    #[error("bytes field exceeds u16 length prefix ({0} bytes)")]
    BytesTooLong(usize),
    #[error("endpoint list exceeds 255 entries ({0})")]
    EndpointListTooLong(usize),
    #[error("encoded message would be {0} bytes, cap is {MAX_MESSAGE_LEN}")]
    MessageTooLarge(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("buffer ends before field {field} of `{command}`")]
    TruncatedBuffer { command: String, field: usize },
    #[error("empty buffer")]
    EmptyBuffer,
    #[error("opcode 0x{0:02x} is not defined by the signature")]
    UnknownOpcode(u8),
    #[error("length prefix of field {field} in `{command}` exceeds remaining bytes")]
    FieldOverrun { command: String, field: usize },
    #[error("{0} trailing bytes after the last field")]
    TrailingBytes(usize),
}

/// Encodes a conforming message to wire bytes.
pub fn encode(msg: &Message, sig: &NetworkSignature) -> Result<Vec<u8>, EncodeError> {
    let format = sig
        .command(msg.opcode)
        .ok_or(EncodeError::UnknownOpcode(msg.opcode))?;
    if msg.fields.len() != format.fields.len() {
        return Err(EncodeError::ArityMismatch {
            command: format.name.clone(),
            want: format.fields.len(),
            got: msg.fields.len(),
        });
    }
    let mut out = Vec::with_capacity(32);
    out.push(msg.opcode);
    for (index, (value, spec)) in msg.fields.iter().zip(&format.fields).enumerate() {
        if value.kind() != spec.kind() {
            return Err(EncodeError::KindMismatch {
                command: format.name.clone(),
                index,
                want: spec.kind(),
            });
        }
        match value {
            FieldValue::U32(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::U64(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::Bytes(b) => {
                if b.len() > u16::MAX as usize {
                    return Err(EncodeError::BytesTooLong(b.len()));
                }
                out.extend_from_slice(&(b.len() as u16).to_be_bytes());
                out.extend_from_slice(b);
            }
            FieldValue::NodeId(id) => out.extend_from_slice(id.as_bytes()),
            FieldValue::Endpoints(eps) => {
                if eps.len() > u8::MAX as usize {
                    return Err(EncodeError::EndpointListTooLong(eps.len()));
                }
                out.push(eps.len() as u8);
                for ep in eps {
                    out.extend_from_slice(&ep.to_wire());
                }
            }
        }
    }
    if out.len() > MAX_MESSAGE_LEN {
        return Err(EncodeError::MessageTooLarge(out.len()));
    }
    Ok(out)
}

/// Decodes wire bytes against the signature.
pub fn decode(bytes: &[u8], sig: &NetworkSignature) -> Result<Message, DecodeError> {
    let (&opcode, mut rest) = bytes.split_first().ok_or(DecodeError::EmptyBuffer)?;
    let format = sig
        .command(opcode)
        .ok_or(DecodeError::UnknownOpcode(opcode))?;
    let mut fields = Vec::with_capacity(format.fields.len());
    for (index, spec) in format.fields.iter().enumerate() {
        let value = match spec.kind() {
            FieldKind::U32 => {
                let raw = take(&mut rest, 4).ok_or_else(|| truncated(format, index))?;
                FieldValue::U32(u32::from_be_bytes(raw.try_into().unwrap()))
            }
            FieldKind::U64 => {
                let raw = take(&mut rest, 8).ok_or_else(|| truncated(format, index))?;
                FieldValue::U64(u64::from_be_bytes(raw.try_into().unwrap()))
            }
            FieldKind::NodeId => {
                let raw = take(&mut rest, NodeId::LEN).ok_or_else(|| truncated(format, index))?;
                FieldValue::NodeId(NodeId(raw.try_into().unwrap()))
            }
            FieldKind::Bytes => {
                let raw = take(&mut rest, 2).ok_or_else(|| truncated(format, index))?;
                let len = u16::from_be_bytes(raw.try_into().unwrap()) as usize;
                let payload = take(&mut rest, len).ok_or_else(|| overrun(format, index))?;
                FieldValue::Bytes(payload.to_vec())
            }
            FieldKind::EndpointList => {
                let raw = take(&mut rest, 1).ok_or_else(|| truncated(format, index))?;
                let count = raw[0] as usize;
                let raw = take(&mut rest, count * Endpoint::WIRE_LEN)
                    .ok_or_else(|| overrun(format, index))?;
                let eps = raw
                    .chunks_exact(Endpoint::WIRE_LEN)
                    .map(|c| Endpoint::from_wire(c).unwrap())
                    .collect();
                FieldValue::Endpoints(eps)
            }
        };
        fields.push(value);
    }
    if !rest.is_empty() {
        return Err(DecodeError::TrailingBytes(rest.len()));
    }
    Ok(Message { opcode, fields })
}

fn take<'a>(rest: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if rest.len() < n {
        return None;
    }
    let (head, tail) = rest.split_at(n);
    *rest = tail;
    Some(head)
}

fn truncated(format: &CommandFormat, field: usize) -> DecodeError {
    DecodeError::TruncatedBuffer {
        command: format.name.clone(),
        field,
    }
}

fn overrun(format: &CommandFormat, field: usize) -> DecodeError {
    DecodeError::FieldOverrun {
        command: format.name.clone(),
        field,
    }
}
