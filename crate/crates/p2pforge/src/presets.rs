//! Built-in signatures for the simulated overlay.
//!
//! These describe the protocol the bundled simulator speaks and double as
//! authoring templates for new signature documents.

use crate::signature::{
    Bootstrap, CncStyle, CommandFormat, Discovery, FieldKind, FieldSpec, Membership,
    NetworkSignature, Timing, Version,
};

fn base_commands() -> Vec<CommandFormat> {
    vec![
        CommandFormat {
            name: "ping".into(),
            opcode: 0x01,
            fields: vec![
                FieldSpec("sender".into(), FieldKind::NodeId),
                FieldSpec("nonce".into(), FieldKind::U32),
            ],
            expects_response: Some(0x02),
        },
        CommandFormat {
            name: "pong".into(),
            opcode: 0x02,
            fields: vec![
                FieldSpec("sender".into(), FieldKind::NodeId),
                FieldSpec("nonce".into(), FieldKind::U32),
            ],
            expects_response: None,
        },
        CommandFormat {
            name: "get_peers".into(),
            opcode: 0x03,
            fields: vec![FieldSpec("sender".into(), FieldKind::NodeId)],
            expects_response: Some(0x04),
        },
        CommandFormat {
            name: "peers".into(),
            opcode: 0x04,
            fields: vec![FieldSpec("endpoints".into(), FieldKind::EndpointList)],
            expects_response: None,
        },
        CommandFormat {
            name: "announce".into(),
            opcode: 0x05,
            fields: vec![FieldSpec("sender".into(), FieldKind::NodeId)],
            expects_response: None,
        },
        CommandFormat {
            name: "command".into(),
            opcode: 0x06,
            fields: vec![
                FieldSpec("key".into(), FieldKind::Bytes),
                FieldSpec("seq".into(), FieldKind::U64),
                FieldSpec("payload".into(), FieldKind::Bytes),
            ],
            expects_response: None,
        },
    ]
}

/// Push-style overlay: commands flood peer-to-peer from the botmaster.
pub fn push_signature() -> NetworkSignature {
    NetworkSignature {
        network_id: "simnet-push".into(),
        version: Version(1, 0, 0),
        bootstrap: Bootstrap::BootstrapServers {
            endpoints: vec!["10.255.0.1:7000".parse().unwrap()],
        },
        membership: Membership::BotsOnly,
        cnc_style: CncStyle::Push,
        discovery: Discovery {
            dht_enabled: false,
            peer_exchange_enabled: true,
        },
        timing: Timing {
            ping_interval: 10,
            peer_exchange_interval: 20,
            command_poll_interval: 0,
        },
        commands: base_commands(),
    }
}

/// Pull-style overlay: bots poll the command source on a fixed cadence.
pub fn pull_signature() -> NetworkSignature {
    let mut commands = base_commands();
    commands.push(CommandFormat {
        name: "poll".into(),
        opcode: 0x07,
        fields: vec![FieldSpec("sender".into(), FieldKind::NodeId)],
        expects_response: Some(0x06),
    });
    NetworkSignature {
        network_id: "simnet-pull".into(),
        version: Version(1, 0, 0),
        bootstrap: Bootstrap::BootstrapServers {
            endpoints: vec!["10.255.0.1:7000".parse().unwrap()],
        },
        membership: Membership::BotsOnly,
        cnc_style: CncStyle::Pull,
        discovery: Discovery {
            dht_enabled: false,
            peer_exchange_enabled: true,
        },
        timing: Timing {
            ping_interval: 10,
            peer_exchange_interval: 20,
            command_poll_interval: 10,
        },
        commands,
    }
}

/// Parasite-style profile: mixed membership, no bootstrap path of its own.
pub fn parasite_signature() -> NetworkSignature {
    let mut sig = push_signature();
    sig.network_id = "simnet-parasite".into();
    sig.bootstrap = Bootstrap::None;
    sig.membership = Membership::Mixed;
    sig
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signature::validate;

    #[test]
    fn presets_are_valid() {
        assert!(validate(&push_signature()).is_empty());
        assert!(validate(&pull_signature()).is_empty());
        assert!(validate(&parasite_signature()).is_empty());
    }
}
