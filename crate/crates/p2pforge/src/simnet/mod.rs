//! Deterministic discrete-event simulator of P2P overlays.
//!
//! Worlds implement the three botnet archetypes (parasite, leeching,
//! bot-only) with churn, NAT, and DHCP address reassignment, and expose
//! ground-truth oracles for validating investigation controllers. Time is
//! integer ticks; a seed plus a config fully determines every observable.
//! No wall clock is consulted anywhere.

mod event;
mod network;
mod world;

pub use event::{EventKind, EventRecord};
pub use network::SimNetwork;
pub use world::{DeliveredPacket, Injection, SimNode, SimWorld};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emulator::roles::MissingRole;
use crate::signature::CncStyle;
use crate::types::SimTime;

/// The three archetypes: who can become a bot and who else is around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BotnetType {
    /// Vulnerable hosts inside an existing P2P network; bots stay
    /// legitimate members of the host overlay.
    Parasite,
    /// Bots join an existing network from outside and leech on it.
    Leeching,
    /// A self-contained overlay where every member is a bot.
    BotOnly,
}

/// Exponential churn; a mean of 0 disables that side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChurnConfig {
    pub mean_join_interval: SimTime,
    pub mean_leave_interval: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhcpConfig {
    /// `None` disables reassignment.
    pub reassign_interval: Option<SimTime>,
    pub address_pool_size: usize,
}

impl Default for DhcpConfig {
    fn default() -> Self {
        DhcpConfig {
            reassign_interval: None,
            address_pool_size: 1024,
        }
    }
}

/// How the overlay is wired at build time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OverlayTopology {
    /// Ring for guaranteed connectivity plus random chords up to the degree
    /// target. The default.
    #[default]
    RingMesh,
    /// Every peer knows only the hub (the botmaster); the hub knows everyone.
    Star,
    /// A small clique of supernodes relays between the botmaster and leaves;
    /// peer exchange advertises supernodes only.
    TwoTier { supernodes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub node_count: usize,
    pub botnet_type: BotnetType,
    /// Fraction of hosts that can be infected (parasite/leeching only).
    #[serde(default)]
    pub vulnerable_fraction: f64,
    #[serde(default)]
    pub churn: ChurnConfig,
    #[serde(default)]
    pub dhcp: DhcpConfig,
    /// Fraction of nodes sharing a public endpoint behind NAT boxes.
    #[serde(default)]
    pub nat_fraction: f64,
    pub degree_target: usize,
    /// Credential that authorizes commands; hex in JSON.
    #[serde(with = "hex_bytes")]
    pub botmaster_key: Vec<u8>,
    #[serde(default)]
    pub topology: OverlayTopology,
    /// When set, the botmaster injects an authorized command every interval,
    /// giving investigations live C&C traffic to observe.
    #[serde(default)]
    pub command_interval: Option<SimTime>,
}

impl SimConfig {
    /// A churn-free, NAT-free, DHCP-free bot-only world. The usual fixture.
    pub fn static_bot_only(seed: u64, node_count: usize) -> Self {
        SimConfig {
            seed,
            node_count,
            botnet_type: BotnetType::BotOnly,
            vulnerable_fraction: 0.0,
            churn: ChurnConfig::default(),
            dhcp: DhcpConfig::default(),
            nat_fraction: 0.0,
            degree_target: (node_count.saturating_sub(1)).clamp(1, 8),
            botmaster_key: b"sim-master-key".to_vec(),
            topology: OverlayTopology::RingMesh,
            command_interval: None,
        }
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer, de::Error as _};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(|e| D::Error::custom(format!("hex: {e}")))
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error(transparent)]
    MissingRole(#[from] MissingRole),
    #[error("injection style {got:?} does not match the signature's {expected:?}")]
    StyleMismatch { expected: CncStyle, got: CncStyle },
    #[error("time {target} is before current time {now}")]
    TimeReversal { now: SimTime, target: SimTime },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::signature::CncStyle;

    #[test]
    fn bot_only_world_is_all_bots() {
        let config = SimConfig::static_bot_only(1, 50);
        let world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        assert_eq!(world.nodes().iter().filter(|n| n.is_bot).count(), 50);
        assert_eq!(
            world
                .nodes()
                .iter()
                .filter(|n| n.is_legitimate_peer)
                .count(),
            0
        );
    }

    #[test]
    fn parasite_bots_are_also_legitimate() {
        let mut config = SimConfig::static_bot_only(2, 100);
        config.botnet_type = BotnetType::Parasite;
        config.vulnerable_fraction = 0.3;
        let world = SimWorld::build(&config, &presets::parasite_signature()).unwrap();
        let bots: Vec<_> = world.nodes().iter().filter(|n| n.is_bot).collect();
        assert_eq!(bots.len(), 30);
        assert!(bots.iter().all(|n| n.is_legitimate_peer));
        assert!(
            world
                .nodes()
                .iter()
                .any(|n| !n.is_bot && n.is_legitimate_peer)
        );
    }

    #[test]
    fn leeching_bots_are_not_legitimate() {
        let mut config = SimConfig::static_bot_only(3, 60);
        config.botnet_type = BotnetType::Leeching;
        config.vulnerable_fraction = 0.25;
        let world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        let bots: Vec<_> = world.nodes().iter().filter(|n| n.is_bot).collect();
        assert_eq!(bots.len(), 15);
        assert!(bots.iter().all(|n| !n.is_legitimate_peer));
        assert_eq!(
            world
                .nodes()
                .iter()
                .filter(|n| n.is_legitimate_peer)
                .count(),
            45
        );
    }

    #[test]
    fn zero_nodes_is_invalid_config() {
        let mut config = SimConfig::static_bot_only(1, 10);
        config.node_count = 0;
        match SimWorld::build(&config, &presets::push_signature()) {
            Err(SimError::InvalidConfig { field, .. }) => assert_eq!(field, "node_count"),
            other => panic!("expected InvalidConfig, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn degree_must_stay_below_node_count() {
        let mut config = SimConfig::static_bot_only(1, 10);
        config.degree_target = 10;
        assert!(matches!(
            SimWorld::build(&config, &presets::push_signature()),
            Err(SimError::InvalidConfig {
                field: "degree_target",
                ..
            })
        ));
    }

    #[test]
    fn run_until_now_is_identity() {
        let config = SimConfig::static_bot_only(4, 20);
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(100).unwrap();
        let log_len = world.event_log().len();
        world.run_until(100).unwrap();
        assert_eq!(world.event_log().len(), log_len);
        assert!(world.run_until(50).is_err());
    }

    #[test]
    fn same_seed_same_history() {
        let mut config = SimConfig::static_bot_only(5, 40);
        config.churn = ChurnConfig {
            mean_join_interval: 60,
            mean_leave_interval: 80,
        };
        let sig = presets::push_signature();
        let mut a = SimWorld::build(&config, &sig).unwrap();
        let mut b = SimWorld::build(&config, &sig).unwrap();
        a.run_until(1000).unwrap();
        b.run_until(1000).unwrap();
        assert_eq!(a.event_log(), b.event_log());
        assert_eq!(a.export_event_log(), b.export_event_log());
        assert_eq!(a.oracle_live_set(1000), b.oracle_live_set(1000));
    }

    #[test]
    fn initial_overlay_is_connected() {
        for seed in 0..5 {
            let config = SimConfig::static_bot_only(seed, 30);
            let world = SimWorld::build(&config, &presets::push_signature()).unwrap();
            let reachable = world.oracle_push_reachable();
            assert_eq!(reachable.len(), 30, "seed {seed}");
        }
    }

    #[test]
    fn footprint_equals_live_at_build_and_after_one_leave() {
        let mut config = SimConfig::static_bot_only(6, 25);
        config.churn.mean_leave_interval = 50;
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        assert_eq!(world.oracle_footprint_set(0), world.oracle_live_set(0));

        // run until exactly one leave happened
        let mut t = 0;
        loop {
            t += 10;
            world.run_until(t).unwrap();
            let leaves = world
                .event_log()
                .iter()
                .filter(|e| matches!(e.kind, EventKind::Leave { .. }))
                .count();
            if leaves == 1 {
                break;
            }
            assert!(t < 10_000, "no leave event in 10k ticks");
        }
        let footprint = world.oracle_footprint_set(t);
        let live = world.oracle_live_set(t);
        assert_eq!(footprint.len(), live.len() + 1);
        assert!(footprint.is_superset(&live));
    }

    #[test]
    fn push_injection_reaches_bfs_oracle_set() {
        let config = SimConfig::static_bot_only(7, 20);
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(50).unwrap();
        let expected = world.oracle_push_reachable();
        let key = world.config().botmaster_key.clone();
        let inj = world.inject_command(b"run", &key, CncStyle::Push).unwrap();
        world.run_until(inj.at + 50).unwrap();
        let executed: std::collections::BTreeSet<_> = world
            .executions(inj.seq)
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        assert_eq!(executed, expected);
        assert_eq!(executed.len(), 20);
    }

    #[test]
    fn invalid_key_executes_nowhere() {
        let config = SimConfig::static_bot_only(8, 20);
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(50).unwrap();
        let inj = world
            .inject_command(b"run", b"wrong-key", CncStyle::Push)
            .unwrap();
        world.run_until(inj.at + 100).unwrap();
        assert!(world.executions(inj.seq).is_empty());
    }

    #[test]
    fn pull_executions_follow_per_node_poll_schedule() {
        let mut config = SimConfig::static_bot_only(9, 15);
        config.command_interval = None;
        let sig = presets::pull_signature();
        let mut world = SimWorld::build(&config, &sig).unwrap();
        world.run_until(40).unwrap();
        let next_polls = world.oracle_next_polls();
        let key = world.config().botmaster_key.clone();
        let inj = world
            .inject_command(b"fetch", &key, CncStyle::Pull)
            .unwrap();
        let poll_interval = sig.timing.command_poll_interval;
        world.run_until(inj.at + poll_interval + 10).unwrap();

        let executed = world.executions(inj.seq);
        assert_eq!(executed.len(), 15, "every alive bot fetched the order");
        for (id, t) in executed {
            // no execution before the injection-time poll boundary, and each
            // execution lands within a reply hop of the node's next poll
            let next = next_polls.get(&id).copied().unwrap();
            assert!(t >= inj.at, "{id} executed before injection");
            assert!(
                t <= next.max(inj.at) + 2,
                "{id} executed at {t}, next poll was {next}"
            );
        }
    }

    #[test]
    fn style_mismatch_is_rejected() {
        let config = SimConfig::static_bot_only(10, 10);
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        assert!(matches!(
            world.inject_command(b"x", b"k", CncStyle::Pull),
            Err(SimError::StyleMismatch { .. })
        ));
    }

    #[test]
    fn dhcp_grows_endpoint_observations_past_node_ids() {
        let mut config = SimConfig::static_bot_only(11, 30);
        config.dhcp = DhcpConfig {
            reassign_interval: Some(100),
            address_pool_size: 120,
        };
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(600).unwrap();
        let obs = world.oracle_ip_observations(600);
        let unique: std::collections::BTreeSet<_> = obs.iter().collect();
        assert!(
            unique.len() > 30,
            "expected address churn to inflate endpoints, got {}",
            unique.len()
        );
    }

    #[test]
    fn without_dhcp_and_nat_endpoints_match_node_ids() {
        let config = SimConfig::static_bot_only(12, 30);
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(600).unwrap();
        let obs = world.oracle_ip_observations(600);
        let unique: std::collections::BTreeSet<_> = obs.iter().collect();
        assert_eq!(unique.len(), 30);
        assert_eq!(obs.len(), 30);
    }

    #[test]
    fn nat_shares_endpoints_across_nodes() {
        let mut config = SimConfig::static_bot_only(13, 40);
        config.nat_fraction = 0.5;
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(200).unwrap();
        let obs = world.oracle_ip_observations(200);
        let unique: std::collections::BTreeSet<_> = obs.iter().collect();
        assert!(unique.len() < 40, "NAT should deflate endpoint counts");
        assert_eq!(obs.len(), 40, "one pairing per bot");
    }

    #[test]
    fn live_set_matches_event_log_replay() {
        let mut config = SimConfig::static_bot_only(14, 50);
        config.churn = ChurnConfig {
            mean_join_interval: 40,
            mean_leave_interval: 60,
        };
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(2000).unwrap();

        // independent fold over the exported TSV log
        let mut alive = std::collections::BTreeSet::new();
        for line in world.export_event_log().lines() {
            let mut parts = line.split('\t');
            let time: SimTime = parts.next().unwrap().parse().unwrap();
            if time > 2000 {
                break;
            }
            match parts.next().unwrap() {
                "join" => {
                    alive.insert(parts.next().unwrap().to_string());
                }
                "leave" => {
                    alive.remove(parts.next().unwrap());
                }
                _ => {}
            }
        }
        let oracle: std::collections::BTreeSet<String> = world
            .oracle_live_set(2000)
            .into_iter()
            .map(|id| id.to_string())
            .collect();
        assert_eq!(alive, oracle);
    }

    #[test]
    fn footprint_contains_live_and_is_monotone() {
        let mut config = SimConfig::static_bot_only(15, 40);
        config.churn = ChurnConfig {
            mean_join_interval: 30,
            mean_leave_interval: 50,
        };
        let mut world = SimWorld::build(&config, &presets::push_signature()).unwrap();
        world.run_until(3000).unwrap();
        let mut prev = 0;
        for t in (0..=3000).step_by(250) {
            let fp = world.oracle_footprint_set(t);
            let live = world.oracle_live_set(t);
            assert!(fp.is_superset(&live), "t={t}");
            assert!(fp.len() >= prev, "footprint shrank at t={t}");
            prev = fp.len();
        }
    }

    #[test]
    fn overlay_repairs_after_single_departure() {
        // kill one bot, wait out 3 ping intervals + one exchange round, and
        // require the alive overlay to be reconnected
        for seed in [21u64, 22, 23] {
            let config = SimConfig::static_bot_only(seed, 12);
            let sig = presets::push_signature();
            let mut world = SimWorld::build(&config, &sig).unwrap();
            world.run_until(100).unwrap();

            // force a departure via a tiny churn burst: emulate by marking the
            // world with one leave through the public API — use inject of churn
            // config instead: rebuild with leave-only churn and wait for one.
            let mut churn_config = SimConfig::static_bot_only(seed, 12);
            churn_config.churn.mean_leave_interval = 150;
            let mut world = SimWorld::build(&churn_config, &sig).unwrap();
            let mut t = 0;
            loop {
                t += 10;
                world.run_until(t).unwrap();
                let leaves = world
                    .event_log()
                    .iter()
                    .filter(|e| matches!(e.kind, EventKind::Leave { .. }))
                    .count();
                if leaves == 1 {
                    break;
                }
                assert!(t < 20_000);
            }
            let bound = 3 * sig.timing.ping_interval + sig.timing.peer_exchange_interval + 10;
            world.run_until(t + bound).unwrap();

            // strong connectivity over alive bots' peer tables
            let alive: Vec<_> = world
                .nodes()
                .iter()
                .filter(|n| n.alive && n.is_bot)
                .collect();
            let alive_ids: std::collections::BTreeSet<_> =
                alive.iter().map(|n| n.node_id).collect();
            for start in &alive {
                let mut seen = std::collections::BTreeSet::from([start.node_id]);
                let mut frontier = vec![*start];
                while let Some(node) = frontier.pop() {
                    for rec in node.peer_table.iter() {
                        if alive_ids.contains(&rec.node_id) && seen.insert(rec.node_id) {
                            frontier.push(world.node_by_id(rec.node_id).expect("alive bot exists"));
                        }
                    }
                }
                assert_eq!(
                    seen, alive_ids,
                    "seed {seed}: overlay not repaired within the bound"
                );
            }
        }
    }
}
