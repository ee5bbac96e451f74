//! Command-line surface: exit codes, outputs, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use p2pforge::presets;
use p2pforge::signature::canonical_document;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_p2pforge"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin()
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn p2pforge")
}

fn write_push_signature(dir: &Path) -> PathBuf {
    let path = dir.join("push.sig.json");
    std::fs::write(&path, canonical_document(&presets::push_signature())).unwrap();
    path
}

fn sim_config_json(seed: u64, nodes: usize) -> serde_json::Value {
    serde_json::json!({
        "seed": seed,
        "node_count": nodes,
        "botnet_type": "bot_only",
        "vulnerable_fraction": 0.0,
        "churn": {"mean_join_interval": 0, "mean_leave_interval": 0},
        "dhcp": {"reassign_interval": null, "address_pool_size": 512},
        "nat_fraction": 0.0,
        "degree_target": 6,
        "botmaster_key": hex::encode(b"sim-master-key"),
    })
}

#[test]
fn sig_validate_accepts_good_document() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_push_signature(dir.path());
    let out = run(&["sig", "validate", sig.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("valid"));
}

#[test]
fn sig_validate_rejects_duplicate_opcode_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut sig = presets::push_signature();
    let dup = sig.commands[0].clone();
    sig.commands.push(dup);
    let path = dir.path().join("dup.sig.json");
    std::fs::write(&path, canonical_document(&sig)).unwrap();
    let out = run(&["sig", "validate", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate opcode"));
}

#[test]
fn sig_digest_is_stable_across_runs_and_formatting() {
    let dir = tempfile::tempdir().unwrap();
    let sig_path = write_push_signature(dir.path());
    let a = run(&["sig", "digest", sig_path.to_str().unwrap()], dir.path());
    let b = run(&["sig", "digest", sig_path.to_str().unwrap()], dir.path());
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let hex_line = String::from_utf8(a.stdout).unwrap();
    assert_eq!(hex_line.trim().len(), 128);

    // pretty-printed copy digests identically
    let doc: serde_json::Value =
        serde_json::from_slice(&std::fs::read(&sig_path).unwrap()).unwrap();
    let pretty_path = dir.path().join("pretty.sig.json");
    std::fs::write(&pretty_path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    let c = run(
        &["sig", "digest", pretty_path.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(hex_line, String::from_utf8(c.stdout).unwrap());
}

#[test]
fn sig_import_export_roundtrip_through_registry() {
    let dir = tempfile::tempdir().unwrap();
    let reg = dir.path().join("networks.reg");

    // stage a bundle of two signatures
    let mut bundle = Vec::new();
    for (i, name) in ["alpha", "beta"].iter().enumerate() {
        let mut sig = presets::push_signature();
        sig.network_id = name.to_string();
        sig.version = p2pforge::signature::Version(1, i as u32, 0);
        let mut tmp = p2pforge::signature::SignatureRegistry::new();
        tmp.add(&sig).unwrap();
        bundle.extend_from_slice(&tmp.export_all());
    }
    let bundle_path = dir.path().join("incoming.bundle");
    std::fs::write(&bundle_path, &bundle).unwrap();

    let out = run(
        &[
            "sig",
            "import",
            bundle_path.to_str().unwrap(),
            "--registry",
            reg.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("2 added"));

    // re-import: both rejected as duplicates, exit 1
    let out = run(
        &[
            "sig",
            "import",
            bundle_path.to_str().unwrap(),
            "--registry",
            reg.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));

    let exported = dir.path().join("alpha.bundle");
    let out = run(
        &[
            "sig",
            "export",
            "alpha",
            "--registry",
            reg.to_str().unwrap(),
            "-o",
            exported.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let text = std::fs::read_to_string(&exported).unwrap();
    assert_eq!(text.lines().count(), 1);

    let out = run(
        &[
            "sig",
            "export",
            "missing",
            "--registry",
            reg.to_str().unwrap(),
            "-o",
            exported.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn investigate_enumerate_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    write_push_signature(dir.path());
    let config = serde_json::json!({
        "signature": {"path": "push.sig.json"},
        "transport": "sim",
        "kind": "enumerate",
        "seed": 11,
        "sim": sim_config_json(11, 60),
        "enumerate": {"n_clients": 2},
        "output": "report.json",
    });
    let config_path = dir.path().join("investigation.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();

    let out = run(&["investigate", config_path.to_str().unwrap()], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    let body = &report["p2pforge_report_v1"];
    assert_eq!(body["kind"], "enumerate");
    assert_eq!(
        body["findings"]["report"]["footprint_ids"]
            .as_array()
            .unwrap()
            .len(),
        60
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("footprint: 60 node ids"));
}

#[test]
fn takeover_over_loopback_is_refused_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    write_push_signature(dir.path());
    let config = serde_json::json!({
        "signature": {"path": "push.sig.json"},
        "transport": "loopback",
        "kind": "takeover",
        "seed": 1,
        "takeover": {"command_hex": "00", "key_hex": "00"},
    });
    let config_path = dir.path().join("takeover.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let out = run(&["investigate", config_path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refused"));
}

#[test]
fn bag_verify_and_replay_cycle() {
    let dir = tempfile::tempdir().unwrap();
    write_push_signature(dir.path());
    let config = serde_json::json!({
        "signature": {"path": "push.sig.json"},
        "transport": "sim",
        "kind": "collect",
        "seed": 3,
        "sim": sim_config_json(3, 30),
        "collect": {"duration": 150},
        "bag": "capture.p2peb",
        "bag_chunk_size": 4096,
        "output": "collect-report.json",
        "case": {"case_id": "case-7", "investigator": "cli-test"},
    });
    let config_path = dir.path().join("collect.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let out = run(&["investigate", config_path.to_str().unwrap()], dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let bag_path = dir.path().join("capture.p2peb");
    let out = run(&["bag", "verify", bag_path.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("overall: pass"));

    // replay prints one line per record
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("collect-report.json")).unwrap(),
    )
    .unwrap();
    let records = report["p2pforge_report_v1"]["findings"]["records"]
        .as_u64()
        .unwrap();
    assert!(records > 0);
    let out = run(
        &[
            "bag",
            "replay",
            bag_path.to_str().unwrap(),
            "--sig",
            "push.sig.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let lines = String::from_utf8_lossy(&out.stdout).lines().count();
    assert_eq!(lines as u64, records);

    // flip one byte inside the record region and verify must name a chunk
    let mut bytes = std::fs::read(&bag_path).unwrap();
    let structure = p2pforge::evidence::parse_bag(&bytes).unwrap();
    bytes[structure.records_start as usize + 10] ^= 0xff;
    let tampered = dir.path().join("tampered.p2peb");
    std::fs::write(&tampered, &bytes).unwrap();
    let out = run(&["bag", "verify", tampered.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("chunk 0: FAIL"));

    // transfer lands a byte-identical copy
    let copied = dir.path().join("copy.p2peb");
    let out = run(
        &[
            "bag",
            "transfer",
            bag_path.to_str().unwrap(),
            "--to",
            copied.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(&bag_path).unwrap(),
        std::fs::read(&copied).unwrap()
    );
}

#[test]
fn sim_run_exports_identical_logs_for_identical_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let sig = write_push_signature(dir.path());
    let config_path = dir.path().join("sim.json");
    std::fs::write(&config_path, sim_config_json(21, 40).to_string()).unwrap();
    for log in ["a.tsv", "b.tsv"] {
        let out = run(
            &[
                "sim",
                "run",
                "--config",
                config_path.to_str().unwrap(),
                "--sig",
                sig.to_str().unwrap(),
                "--until",
                "500",
                "--export-log",
                log,
            ],
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let a = std::fs::read(dir.path().join("a.tsv")).unwrap();
    let b = std::fs::read(dir.path().join("b.tsv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn missing_sim_section_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    write_push_signature(dir.path());
    let config = serde_json::json!({
        "signature": {"path": "push.sig.json"},
        "transport": "sim",
        "kind": "enumerate",
        "seed": 1,
    });
    let config_path = dir.path().join("broken.json");
    std::fs::write(&config_path, config.to_string()).unwrap();
    let out = run(&["investigate", config_path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sim"));
}
