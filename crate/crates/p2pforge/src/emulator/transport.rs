//! Transport backends: the in-process simulator (primary, deterministic)
//! and loopback UDP datagrams for integration tests. Same codec on both;
//! one message per datagram, no fragmentation.

use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::emulator::codec::MAX_MESSAGE_LEN;
use crate::simnet::SimNetwork;
use crate::types::{Endpoint, NodeId, SimTime};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("datagram of {0} bytes exceeds the {MAX_MESSAGE_LEN}-byte cap")]
    DatagramTooLarge(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundDatagram {
    pub src: Endpoint,
    pub at: SimTime,
    pub bytes: Vec<u8>,
}

/// A datagram endpoint the emulated client drives.
pub trait Transport {
    fn local_endpoint(&self) -> Endpoint;
    fn send(&mut self, dst: Endpoint, bytes: &[u8]) -> Result<(), TransportError>;
    fn recv(&mut self) -> Option<InboundDatagram>;
    fn now(&self) -> SimTime;
    /// Advances time one unit (simulator tick or a short real-time poll).
    fn step(&mut self) -> SimTime;
    fn is_simulated(&self) -> bool;
    /// How many `now()` ticks one signature time unit spans. The simulator
    /// is 1:1; loopback stamps nanoseconds and treats a unit as 1 ms.
    fn ticks_per_unit(&self) -> u64 {
        1
    }
    /// Whether an identifier is already taken by a network member; used for
    /// rejection-sampling client identities.
    fn knows_node_id(&self, _id: NodeId) -> bool {
        false
    }
}

/// External endpoint attached to a simulated world.
pub struct SimTransport {
    net: SimNetwork,
    endpoint: Endpoint,
}

impl SimTransport {
    pub fn attach(net: &SimNetwork) -> Self {
        let endpoint = net.attach_external();
        SimTransport {
            net: net.clone(),
            endpoint,
        }
    }

    pub fn network(&self) -> &SimNetwork {
        &self.net
    }
}

impl Transport for SimTransport {
    fn local_endpoint(&self) -> Endpoint {
        self.endpoint
    }

    fn send(&mut self, dst: Endpoint, bytes: &[u8]) -> Result<(), TransportError> {
        if bytes.len() > MAX_MESSAGE_LEN {
            return Err(TransportError::DatagramTooLarge(bytes.len()));
        }
        self.net.send_external(self.endpoint, dst, bytes.to_vec());
        Ok(())
    }

    fn recv(&mut self) -> Option<InboundDatagram> {
        self.net
            .recv_external(self.endpoint)
            .map(|p| InboundDatagram {
                src: p.src,
                at: p.at,
                bytes: p.bytes,
            })
    }

    fn now(&self) -> SimTime {
        self.net.now()
    }

    fn step(&mut self) -> SimTime {
        self.net.step()
    }

    fn is_simulated(&self) -> bool {
        true
    }

    fn knows_node_id(&self, id: NodeId) -> bool {
        self.net.contains_node_id(id)
    }
}

/// One UDP socket on 127.0.0.1; timestamps are UTC nanoseconds.
pub struct UdpTransport {
    socket: UdpSocket,
    endpoint: Endpoint,
}

impl UdpTransport {
    pub fn bind() -> Result<Self, TransportError> {
        let socket = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0))?;
        socket.set_nonblocking(true)?;
        let local = socket.local_addr()?;
        let endpoint = socket_endpoint(local).expect("loopback sockets are IPv4");
        Ok(UdpTransport { socket, endpoint })
    }
}

fn socket_endpoint(addr: SocketAddr) -> Option<Endpoint> {
    match addr {
        SocketAddr::V4(v4) => Some(Endpoint::new(*v4.ip(), v4.port())),
        SocketAddr::V6(_) => None,
    }
}

fn utc_nanos() -> SimTime {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}

impl Transport for UdpTransport {
    fn local_endpoint(&self) -> Endpoint {
        self.endpoint
    }

    fn send(&mut self, dst: Endpoint, bytes: &[u8]) -> Result<(), TransportError> {
        if bytes.len() > MAX_MESSAGE_LEN {
            return Err(TransportError::DatagramTooLarge(bytes.len()));
        }
        self.socket.send_to(bytes, (dst.addr, dst.port))?;
        Ok(())
    }

    fn recv(&mut self) -> Option<InboundDatagram> {
        let mut buf = [0u8; 2048];
        loop {
            match self.socket.recv_from(&mut buf) {
                Ok((len, src)) => {
                    let Some(src) = socket_endpoint(src) else {
                        continue;
                    };
                    return Some(InboundDatagram {
                        src,
                        at: utc_nanos(),
                        bytes: buf[..len].to_vec(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => return None,
                Err(_) => return None,
            }
        }
    }

    fn now(&self) -> SimTime {
        utc_nanos()
    }

    fn step(&mut self) -> SimTime {
        std::thread::sleep(Duration::from_millis(1));
        utc_nanos()
    }

    fn is_simulated(&self) -> bool {
        false
    }

    fn ticks_per_unit(&self) -> u64 {
        1_000_000
    }
}
