//! Signature-derived conformance checker.
//!
//! Scripted stimuli are fired at a responder endpoint inside a simulated
//! world; replies must carry the opcode the signature's `expects_response`
//! names, decode cleanly, and conform field-by-field. Periodic behavior is
//! checked by watching the responder's own pings arrive on the signature's
//! cadence. The checker answers pings addressed to it (it has to stay in
//! the responder's peer table to observe the cadence). A responder that
//! passes is indistinguishable, to this checker, from a regular member.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::codec::{self, Message};
use super::roles::{self, CommandRoles, Role};
use crate::signature::NetworkSignature;
use crate::simnet::SimNetwork;
use crate::types::{Endpoint, NodeId, SimTime};

#[derive(Debug, Clone)]
pub struct ConformanceIssue {
    pub at: SimTime,
    pub what: String,
}

#[derive(Debug, Default)]
pub struct ConformanceReport {
    pub checks: usize,
    pub issues: Vec<ConformanceIssue>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }
}

struct Checker<'a> {
    net: &'a SimNetwork,
    sig: &'a NetworkSignature,
    roles: CommandRoles,
    endpoint: Endpoint,
    id: NodeId,
    target: Endpoint,
    transcript: Vec<(SimTime, Endpoint, Message)>,
    report: ConformanceReport,
}

impl<'a> Checker<'a> {
    /// Steps the world `ticks` times, keeping the caller's client serviced,
    /// answering pings, and recording traffic from the responder.
    fn run(&mut self, ticks: u64, pump: &mut dyn FnMut(SimTime)) {
        for _ in 0..ticks {
            let t = self.net.step();
            pump(t);
            self.drain();
        }
    }

    fn drain(&mut self) {
        while let Some(pkt) = self.net.recv_external(self.endpoint) {
            match codec::decode(&pkt.bytes, self.sig) {
                Ok(msg) => {
                    if Some(msg.opcode) == self.roles.ping
                        && let Some(pong) = self.roles.pong
                    {
                        let reply = roles::build_reply(self.sig, pong, self.id, &msg, &[]);
                        let bytes = codec::encode(&reply, self.sig).expect("pong conforms");
                        self.net.send_external(self.endpoint, pkt.src, bytes);
                    }
                    self.transcript.push((pkt.at, pkt.src, msg));
                }
                Err(e) if pkt.src == self.target => {
                    self.report.issues.push(ConformanceIssue {
                        at: pkt.at,
                        what: format!("undecodable reply from responder: {e}"),
                    });
                }
                Err(_) => {}
            }
        }
    }

    fn responder_traffic_after(
        &self,
        t: SimTime,
    ) -> impl Iterator<Item = &(SimTime, Endpoint, Message)> {
        self.transcript
            .iter()
            .filter(move |(at, src, _)| *at > t && *src == self.target)
    }
}

/// Drives the scripted stimulus set against `target`. `pump` runs once per
/// simulator tick so callers can keep an emulated client serviced while it
/// is being probed; pass a no-op for simulated nodes.
pub fn check_responder(
    net: &SimNetwork,
    sig: &NetworkSignature,
    target: Endpoint,
    seed: u64,
    pump: &mut dyn FnMut(SimTime),
) -> ConformanceReport {
    let roles = CommandRoles::resolve(sig);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checker = Checker {
        net,
        sig,
        roles,
        endpoint: net.attach_external(),
        id: NodeId([0xc4; 20]),
        target,
        transcript: Vec::new(),
        report: ConformanceReport::default(),
    };

    // Request/response pairs declared by the signature.
    for cmd in &sig.commands {
        let Some(expected) = cmd.expects_response else {
            continue;
        };
        // Command-role stimuli are not sent: a checker must not issue orders.
        if roles.role_of(cmd.opcode) == Some(Role::Command) {
            continue;
        }
        checker.report.checks += 1;
        let msg = roles::build_request(sig, cmd.opcode, checker.id, &mut rng);
        let bytes = codec::encode(&msg, sig).expect("stimulus conforms");
        net.send_external(checker.endpoint, target, bytes);
        let sent_at = net.now();
        checker.run(6, pump);
        let reply = checker
            .responder_traffic_after(sent_at)
            .find(|(_, _, m)| m.opcode == expected)
            .map(|(at, _, m)| (*at, m.clone()));
        match reply {
            None if roles.role_of(cmd.opcode) == Some(Role::Poll) => {
                // No staged order is a valid reason for silence.
            }
            None => {
                let what = format!("no 0x{expected:02x} reply to `{}` within 6 ticks", cmd.name);
                checker.report.issues.push(ConformanceIssue {
                    at: net.now(),
                    what,
                });
            }
            Some((at, m)) => {
                if !m.conforms_to(sig) {
                    checker.report.issues.push(ConformanceIssue {
                        at,
                        what: format!("reply to `{}` does not conform", cmd.name),
                    });
                }
            }
        }
    }

    // Garbage must be ignored: no solicited-style reply may come back.
    checker.report.checks += 1;
    net.send_external(checker.endpoint, target, vec![0x00, 0xde, 0xad]);
    let sent_at = net.now();
    checker.run(4, pump);
    let reply_opcodes: Vec<u8> = [roles.pong, roles.peers, roles.command]
        .into_iter()
        .flatten()
        .collect();
    if checker
        .responder_traffic_after(sent_at)
        .any(|(_, _, m)| reply_opcodes.contains(&m.opcode))
    {
        checker.report.issues.push(ConformanceIssue {
            at: net.now(),
            what: "responder answered an undecodable buffer".into(),
        });
    }

    // Periodic liveness traffic: the stimuli above put us in the responder's
    // peer table; its pings to us must arrive on the declared cadence.
    if let (Some(ping_op), interval) = (roles.ping, sig.timing.ping_interval) {
        checker.report.checks += 1;
        let watch_from = net.now();
        checker.run(interval * 4, pump);
        let ping_times: Vec<SimTime> = checker
            .responder_traffic_after(watch_from)
            .filter(|(_, _, m)| m.opcode == ping_op)
            .map(|(at, _, _)| *at)
            .collect();
        if ping_times.len() < 2 {
            checker.report.issues.push(ConformanceIssue {
                at: net.now(),
                what: format!("saw {} periodic pings, wanted ≥ 2", ping_times.len()),
            });
        } else {
            for pair in ping_times.windows(2) {
                let gap = pair[1] - pair[0];
                if gap != interval {
                    checker.report.issues.push(ConformanceIssue {
                        at: pair[1],
                        what: format!("ping gap {gap}, declared interval {interval}"),
                    });
                }
            }
        }
    }
    checker.report
}
