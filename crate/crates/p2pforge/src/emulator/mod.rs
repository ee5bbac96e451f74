//! Signature-driven protocol client: codec, peer table, transports, and the
//! emulated client that joins a network as if it were any other node.

pub mod client;
pub mod codec;
pub mod conformance;
pub mod peer;
pub mod roles;
pub mod transport;

pub use client::{
    ConnectError, ConnectOptions, EmulatedClient, Observation, PacketTap, Participation, TapRef,
};
pub use codec::{DecodeError, EncodeError, FieldValue, Message, decode, encode};
pub use conformance::{ConformanceReport, check_responder};
pub use peer::{PeerRecord, PeerSource, PeerTable};
pub use roles::{CommandRoles, Role};
pub use transport::{InboundDatagram, SimTransport, Transport, TransportError, UdpTransport};
