//! `investigate`: run one configured investigation end to end — build the
//! transport, drive the controller, write the machine report, and seal and
//! verify the evidence bag when one was requested.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use p2pforge::controllers::{
    self, AnatomyOptions, AnatomyThresholds, ControllerError, EnumerateOptions, StopRule,
    Transporter, render_report,
};
use p2pforge::emulator::{ConnectOptions, EmulatedClient};
use p2pforge::evidence::{BagHeader, DEFAULT_CHUNK_SIZE, EvidenceBag, SharedBag, TimestampClock};
use p2pforge::signature::{self, NetworkSignature, SignatureRegistry, Version};
use p2pforge::simnet::{SimConfig, SimNetwork, SimWorld};
use p2pforge::types::Endpoint;

use crate::{Cli, CliError, resolve_output};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SignatureRef {
    Path {
        path: PathBuf,
    },
    Registry {
        network_id: String,
        #[serde(default)]
        version: Option<(u32, u32, u32)>,
        registry: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TransportKind {
    Sim,
    Loopback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum InvestigationKind {
    Enumerate,
    Anatomy,
    Collect,
    Takeover,
}

impl InvestigationKind {
    fn name(self) -> &'static str {
        match self {
            InvestigationKind::Enumerate => "enumerate",
            InvestigationKind::Anatomy => "anatomy",
            InvestigationKind::Collect => "collect",
            InvestigationKind::Takeover => "takeover",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StopRuleParams {
    #[serde(default = "default_quiescent")]
    quiescent_rounds: u32,
    #[serde(default)]
    max_rounds: Option<u32>,
    #[serde(default)]
    min_duration: u64,
    #[serde(default)]
    max_duration: Option<u64>,
}

fn default_quiescent() -> u32 {
    5
}

impl Default for StopRuleParams {
    fn default() -> Self {
        StopRuleParams {
            quiescent_rounds: 5,
            max_rounds: None,
            min_duration: 0,
            max_duration: None,
        }
    }
}

impl From<&StopRuleParams> for StopRule {
    fn from(p: &StopRuleParams) -> StopRule {
        StopRule {
            quiescent_rounds: p.quiescent_rounds,
            max_rounds: p.max_rounds,
            min_duration: p.min_duration,
            max_duration: p.max_duration,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnumerateParams {
    #[serde(default = "default_one")]
    n_clients: usize,
    #[serde(default)]
    stop: StopRuleParams,
    #[serde(default = "default_budget")]
    probe_budget: usize,
}

fn default_one() -> usize {
    1
}

fn default_budget() -> usize {
    16
}

impl Default for EnumerateParams {
    fn default() -> Self {
        EnumerateParams {
            n_clients: 1,
            stop: StopRuleParams::default(),
            probe_budget: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnatomyParams {
    #[serde(default = "default_observe")]
    observe_duration: u64,
    #[serde(default)]
    thresholds: Option<ThresholdParams>,
}

fn default_observe() -> u64 {
    600
}

impl Default for AnatomyParams {
    fn default() -> Self {
        AnatomyParams {
            observe_duration: 600,
            thresholds: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct ThresholdParams {
    centralized_share: f64,
    centralized_max_origins: usize,
    decentralized_min_spread: f64,
    decentralized_max_share: f64,
    min_command_messages: usize,
}

impl From<ThresholdParams> for AnatomyThresholds {
    fn from(p: ThresholdParams) -> Self {
        AnatomyThresholds {
            centralized_share: p.centralized_share,
            centralized_max_origins: p.centralized_max_origins,
            decentralized_min_spread: p.decentralized_min_spread,
            decentralized_max_share: p.decentralized_max_share,
            min_command_messages: p.min_command_messages,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CollectParams {
    duration: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TakeoverParams {
    command_hex: String,
    key_hex: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseParams {
    #[serde(default = "default_case_id")]
    case_id: String,
    #[serde(default = "default_investigator")]
    investigator: String,
    #[serde(default)]
    note: Option<String>,
}

fn default_case_id() -> String {
    "case-unnamed".into()
}

fn default_investigator() -> String {
    "p2pforge".into()
}

impl Default for CaseParams {
    fn default() -> Self {
        CaseParams {
            case_id: default_case_id(),
            investigator: default_investigator(),
            note: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InvestigationConfig {
    signature: SignatureRef,
    transport: TransportKind,
    kind: InvestigationKind,
    seed: u64,
    #[serde(default)]
    sim: Option<SimConfig>,
    #[serde(default)]
    loopback_hints: Vec<Endpoint>,
    #[serde(default)]
    enumerate: Option<EnumerateParams>,
    #[serde(default)]
    anatomy: Option<AnatomyParams>,
    #[serde(default)]
    collect: Option<CollectParams>,
    #[serde(default)]
    takeover: Option<TakeoverParams>,
    #[serde(default)]
    bag: Option<PathBuf>,
    #[serde(default)]
    bag_chunk_size: Option<u32>,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default)]
    case: CaseParams,
}

fn default_output() -> PathBuf {
    PathBuf::from("report.json")
}

fn load_signature(config_dir: &Path, sig_ref: &SignatureRef) -> Result<NetworkSignature, CliError> {
    match sig_ref {
        SignatureRef::Path { path } => {
            let full = if path.is_relative() {
                config_dir.join(path)
            } else {
                path.clone()
            };
            let text = std::fs::read_to_string(&full)
                .map_err(|e| CliError::Config(format!("signature {}: {e}", full.display())))?;
            signature::parse_signature(&text)
                .map_err(|e| CliError::Config(format!("signature: {e}")))
        }
        SignatureRef::Registry {
            network_id,
            version,
            registry,
        } => {
            let reg = SignatureRegistry::load(registry)
                .map_err(|e| CliError::Config(format!("registry {}: {e}", registry.display())))?;
            let entry = match version {
                Some((a, b, c)) => reg.get(network_id, Version(*a, *b, *c)),
                None => reg.latest(network_id),
            };
            entry
                .map(|e| e.signature.clone())
                .ok_or_else(|| CliError::Config(format!("registry has no `{network_id}`")))
        }
    }
}

pub fn run(cli: &Cli, config_path: &Path) -> Result<(), CliError> {
    let raw = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("read {}: {e}", config_path.display())))?;
    let mut config: InvestigationConfig = serde_json::from_str(&raw)
        .map_err(|e| CliError::Config(format!("investigation config: {e}")))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }

    // Hard gate, mirrored from the takeover controller.
    if config.kind == InvestigationKind::Takeover && config.transport != TransportKind::Sim {
        return Err(CliError::Config(
            "kind=takeover requires transport=sim: taking over a real network is refused".into(),
        ));
    }

    let config_dir = config_path.parent().unwrap_or(Path::new("."));
    let sig = load_signature(config_dir, &config.signature)?;
    let sig_digest = signature::digest(&sig);

    let transporter = match config.transport {
        TransportKind::Sim => {
            let sim_config = config
                .sim
                .as_ref()
                .ok_or_else(|| CliError::Config("transport=sim requires a `sim` section".into()))?;
            let world =
                SimWorld::build(sim_config, &sig).map_err(|e| CliError::Config(e.to_string()))?;
            Transporter::Sim(SimNetwork::new(world))
        }
        TransportKind::Loopback => Transporter::Loopback {
            hints: config.loopback_hints.clone(),
        },
    };

    let bag = match &config.bag {
        Some(path) => {
            let full = resolve_output(&cli.output_dir, path);
            let header = BagHeader {
                case_id: config.case.case_id.clone(),
                investigator: config.case.investigator.clone(),
                network_id: sig.network_id.clone(),
                signature_digest: sig_digest,
                created_at_utc_ns: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_nanos() as u64)
                    .unwrap_or(0),
                clock: match config.transport {
                    TransportKind::Sim => TimestampClock::Sim,
                    TransportKind::Loopback => TimestampClock::UtcNanos,
                },
                chunk_size: config.bag_chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE),
                note: config.case.note.clone(),
            };
            let bag = EvidenceBag::open(&full, header)
                .map_err(|e| CliError::Config(format!("bag {}: {e}", full.display())))?;
            Some((full, SharedBag::new(bag)))
        }
        None => None,
    };

    let findings = run_kind(&config, &sig, &transporter, bag.as_ref().map(|(_, b)| b))?;

    let echo = serde_json::to_value(&config).expect("config echoes");
    let report_text = render_report(config.kind.name(), echo, &sig_digest, &findings);
    let report_path = resolve_output(&cli.output_dir, &config.output);
    std::fs::write(&report_path, &report_text)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", report_path.display())))?;

    if !cli.quiet {
        print_summary(&config, &findings, &report_path);
    }

    // Seal and verify before exit; the verdict decides the exit code.
    if let Some((path, shared)) = bag {
        shared
            .seal()
            .map_err(|e| CliError::Runtime(format!("seal bag: {e}")))?;
        let bytes =
            std::fs::read(&path).map_err(|e| CliError::Runtime(format!("reread bag: {e}")))?;
        let report = p2pforge::evidence::verify_bytes(&bytes)
            .map_err(|e| CliError::Domain(format!("bag verify: {e}")))?;
        if !cli.quiet {
            println!(
                "bag: {} ({} records, {} chunks) verify: {}",
                path.display(),
                shared.with(|b| b.record_count()),
                report.chunks.len(),
                if report.pass { "pass" } else { "FAIL" }
            );
        }
        if !report.pass {
            return Err(CliError::Domain("sealed bag failed verification".into()));
        }
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Findings {
    Enumeration {
        report: controllers::EnumerationReport,
        interim_footprints: Vec<usize>,
    },
    Anatomy(controllers::AnatomyReport),
    Collect {
        records: u64,
        chunks_written: (u64, u64),
    },
    Takeover(controllers::TakeoverReport),
}

fn run_kind(
    config: &InvestigationConfig,
    sig: &NetworkSignature,
    net: &Transporter,
    bag: Option<&SharedBag>,
) -> Result<Findings, CliError> {
    let controller_err = |e: ControllerError| match e {
        ControllerError::InvalidOptions(m) => CliError::Config(m.to_string()),
        ControllerError::RealTransportRefused => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    };
    match config.kind {
        InvestigationKind::Enumerate => {
            let params = config.enumerate.clone().unwrap_or_default();
            let outcome = controllers::enumerate(
                net,
                sig,
                EnumerateOptions {
                    n_clients: params.n_clients,
                    stop: StopRule::from(&params.stop),
                    probe_budget: params.probe_budget,
                    seed: config.seed,
                    bag: bag.cloned(),
                    collect_interim: true,
                },
            )
            .map_err(controller_err)?;
            Ok(Findings::Enumeration {
                interim_footprints: outcome.interim.iter().map(|r| r.footprint_len()).collect(),
                report: outcome.report,
            })
        }
        InvestigationKind::Anatomy => {
            let params = config.anatomy.clone().unwrap_or_default();
            let report = controllers::investigate_anatomy(
                net,
                sig,
                AnatomyOptions {
                    observe_duration: params.observe_duration,
                    seed: config.seed,
                    thresholds: params.thresholds.map(Into::into).unwrap_or_default(),
                    bag: bag.cloned(),
                },
            )
            .map_err(controller_err)?;
            Ok(Findings::Anatomy(report))
        }
        InvestigationKind::Collect => {
            let params = config.collect.as_ref().ok_or_else(|| {
                CliError::Config("kind=collect requires a `collect` section".into())
            })?;
            let shared = bag.ok_or_else(|| {
                CliError::Config("kind=collect requires a `bag` output path".into())
            })?;
            let mut transport = match net {
                Transporter::Sim(sim) => p2pforge::emulator::SimTransport::attach(sim),
                Transporter::Loopback { .. } => {
                    return Err(CliError::Config(
                        "collect over loopback is driven by external tooling; use transport=sim"
                            .into(),
                    ));
                }
            };
            let hints = match net {
                Transporter::Sim(sim) => sim.entry_hints(4),
                Transporter::Loopback { hints } => hints.clone(),
            };
            let mut client = EmulatedClient::connect(
                sig,
                &mut transport,
                &hints,
                ConnectOptions {
                    seed: config.seed,
                    ..ConnectOptions::default()
                },
            )
            .map_err(|e| CliError::Runtime(e.to_string()))?;
            let range =
                controllers::collect_evidence(&mut client, &mut transport, params.duration, shared)
                    .map_err(controller_err)?;
            Ok(Findings::Collect {
                records: shared.with(|b| b.record_count()),
                chunks_written: (range.start, range.end),
            })
        }
        InvestigationKind::Takeover => {
            let params = config.takeover.as_ref().ok_or_else(|| {
                CliError::Config("kind=takeover requires a `takeover` section".into())
            })?;
            let command = hex::decode(&params.command_hex)
                .map_err(|e| CliError::Config(format!("command_hex: {e}")))?;
            let key = hex::decode(&params.key_hex)
                .map_err(|e| CliError::Config(format!("key_hex: {e}")))?;
            let report = controllers::takeover(net, sig, &command, &key).map_err(controller_err)?;
            Ok(Findings::Takeover(report))
        }
    }
}

fn print_summary(config: &InvestigationConfig, findings: &Findings, report_path: &Path) {
    println!("investigation: {}", config.kind.name());
    match findings {
        Findings::Enumeration { report, .. } => {
            println!("footprint: {} node ids", report.footprint_len());
            println!("live estimate: {}", report.live_estimate);
            println!("unique endpoints: {}", report.unique_endpoints);
            println!("rounds: {} converged: {}", report.rounds, report.converged);
        }
        Findings::Anatomy(report) => {
            println!("topology: {:?}", report.topology_class);
            println!("c&c style observed: {:?}", report.cnc_style_observed);
            println!(
                "degree min/median/max: {}/{}/{}",
                report.degree_summary.min, report.degree_summary.median, report.degree_summary.max
            );
        }
        Findings::Collect {
            records,
            chunks_written,
        } => {
            println!("records captured: {records}");
            println!("chunks written: {}..{}", chunks_written.0, chunks_written.1);
        }
        Findings::Takeover(report) => {
            println!(
                "executed: {} / oracle {}",
                report.executed_count, report.reachable_oracle_count
            );
            match report.latency_to_quorum {
                Some(t) => println!("latency to 90% quorum: {t}"),
                None => println!("quorum not reached"),
            }
        }
    }
    println!("report: {}", report_path.display());
}
