//! p2pforge: an investigation framework for P2P overlays.
//!
//! The framework joins arbitrary peer-to-peer overlays described by
//! declarative network signatures, runs standardized investigations
//! (enumeration, anatomy classification, evidence collection, takeover),
//! and stores captured traffic in tamper-evident evidence bags. Everything
//! is validated end-to-end against a built-in deterministic overlay
//! simulator with ground-truth oracles.
//!
//! Components:
//!
//! * [`signature`] — declarative protocol signatures: command formats plus
//!   operating parameters, a canonical digest, and a file-based registry.
//! * [`simnet`] — deterministic discrete-event simulator of the three
//!   botnet archetypes, with churn, NAT, DHCP reassignment, and oracles.
//! * [`emulator`] — the signature-driven client: wire codec, peer table,
//!   transports (in-process simulator and loopback UDP), conformance.
//! * [`controllers`] — the standardized investigation drivers.
//! * [`evidence`] — the chunked, SHA-512-verified evidence bag with replay
//!   and a verified transfer protocol.

pub mod controllers;
pub mod emulator;
pub mod evidence;
pub mod presets;
pub mod signature;
pub mod simnet;
pub mod types;
