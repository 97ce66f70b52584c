//! `wbms`: drive the secure readout simulator from the command line.
//!
//! Exit codes: 0 success, 1 protocol failure or successful attack, 2 usage or
//! input error, 3 store error, 4 BAN goals not derivable, 5 simulation error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use wbms_core::adversary::{
    run_attack, run_attack_suite_with, run_session, session_id, DeliveryPolicy, Direction,
    EndpointConfig, LinkChannel, StrategyKind, CONTROLLER_ID, READER_ID,
};
use wbms_core::ban::{
    derive, DeriveError, Protocol, BUNDLED_GOALS, BUNDLED_PROTOCOL, DEFAULT_MAX_DEPTH,
};
use wbms_core::diagnostics::{collect_from_bpcs, idle_packet, BpcReport, PackId};
use wbms_core::handshake::PrincipalId;
use wbms_core::secure_channel::MasterKey;
use wbms_core::wakeup::{compare_methods, simulate, Method, PowerModel, Ranking, StorageScenario};

use wbms_cli::store::{PassportEntry, Store, StoreError};

// Demo key for runs without --key/--key-file.
const DEMO_KEY_HEX: &str = "6b65792d666f722d64656d6f2d6f6e6c";

#[derive(Parser)]
#[command(
    name = "wbms",
    version,
    about = "Secure NFC readout simulator for battery packs"
)]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Master key as 32 hex digits.
    #[arg(long, global = true, conflicts_with = "key_file")]
    key: Option<String>,
    /// File holding the master key as hex.
    #[arg(long, global = true)]
    key_file: Option<PathBuf>,
    /// Passport store (newline-delimited JSON).
    #[arg(
        long,
        global = true,
        env = "BMS_STORE_PATH",
        default_value = "passport.ndjson"
    )]
    store: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Idle,
    Active,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Ed,
    Eh,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run the five-message handshake between reader and controller.
    Handshake {
        /// Give the controller a different key (hex) to see the failure.
        #[arg(long)]
        controller_key: Option<String>,
    },
    /// Read diagnostics over a secure session and append them to the store.
    Readout {
        #[arg(long, value_enum)]
        mode: Mode,
        /// JSON array of pack reports.
        #[arg(long)]
        reports: PathBuf,
    },
    /// Stored entries for one pack, oldest first.
    History {
        /// Pack id as 16 hex digits.
        #[arg(long)]
        pack_id: String,
    },
    /// Simulate a storage period with ED and/or EH wake-up.
    WakeupSim {
        #[arg(long, value_enum, default_value_t = MethodArg::Both)]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        days: f64,
        /// One readout per day at noon, this many seconds long.
        #[arg(long)]
        session_seconds: Option<f64>,
        /// Scenario JSON; replaces --days and --session-seconds.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Power model JSON; missing fields keep their defaults.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Print the event trace as JSON lines instead of a summary.
        #[arg(long)]
        trace: bool,
    },
    /// Run adversary strategies against honest sessions.
    Attack {
        /// eavesdrop, replay, reflect, chosen-challenge, bit-flip or all.
        #[arg(long, default_value = "all")]
        strategy: String,
        #[arg(long, default_value_t = 100)]
        runs: usize,
        /// Include the hex transcript of the first run of each strategy.
        #[arg(long)]
        transcript: bool,
    },
    /// Re-derive the protocol's authentication goals in BAN logic.
    BanVerify {
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        goals: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
    },
}

struct Failure {
    code: u8,
    kind: &'static str,
    detail: String,
}

impl Failure {
    fn usage(detail: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "invalid_input",
            detail: detail.into(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let kind = match e {
            StoreError::Io { .. } => "store_io",
            StoreError::Corrupted { .. } => "store_corrupted",
        };
        Self {
            code: 3,
            kind,
            detail: e.to_string(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("{}", json!({ "error": f.kind, "detail": f.detail }));
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Handshake { controller_key } => cmd_handshake(cli, controller_key.as_deref()),
        Command::Readout { mode, reports } => cmd_readout(cli, *mode, reports),
        Command::History { pack_id } => cmd_history(cli, pack_id),
        Command::WakeupSim {
            method,
            days,
            session_seconds,
            scenario,
            model,
            trace,
        } => cmd_wakeup_sim(
            cli,
            *method,
            *days,
            *session_seconds,
            scenario.as_deref(),
            model.as_deref(),
            *trace,
        ),
        Command::Attack {
            strategy,
            runs,
            transcript,
        } => cmd_attack(cli, strategy, *runs, *transcript),
        Command::BanVerify {
            protocol,
            goals,
            max_depth,
        } => cmd_ban_verify(cli, protocol.as_deref(), goals.as_deref(), *max_depth),
    }
}

fn emit<T: Serialize>(cli: &Cli, value: &T, text: impl FnOnce() -> String) {
    let out = match cli.format {
        Format::Json => serde_json::to_string_pretty(value).expect("reports serialize") + "\n",
        Format::Text => text(),
    };
    // A closed pipe (`| head`) is not an error worth reporting.
    let _ = std::io::stdout().lock().write_all(out.as_bytes());
}

/// The wire name of a unit-variant enum.
fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        _ => String::new(),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn parse_key(hex: &str) -> Result<MasterKey, Failure> {
    // The rejected text is never repeated back.
    MasterKey::from_hex(hex).map_err(|_| Failure::usage("master key must be 32 hex digits"))
}

fn master_key(cli: &Cli) -> Result<MasterKey, Failure> {
    match (&cli.key, &cli.key_file) {
        (Some(k), _) => parse_key(k),
        (None, Some(path)) => parse_key(&read_file(path)?),
        (None, None) => parse_key(DEMO_KEY_HEX),
    }
}

fn endpoints(reader_key: MasterKey, controller_key: MasterKey) -> (EndpointConfig, EndpointConfig) {
    (
        EndpointConfig {
            id: PrincipalId::new(READER_ID).expect("nonzero"),
            key: reader_key,
        },
        EndpointConfig {
            id: PrincipalId::new(CONTROLLER_ID).expect("nonzero"),
            key: controller_key,
        },
    )
}

#[derive(Serialize)]
struct FrameView {
    index: usize,
    direction: Direction,
    len: usize,
    hex: String,
}

fn cmd_handshake(cli: &Cli, controller_key: Option<&str>) -> CmdResult {
    let key = master_key(cli)?;
    let ckey = match controller_key {
        Some(k) => parse_key(k)?,
        None => key.clone(),
    };
    let (reader, controller) = endpoints(key, ckey);
    let mut channel = LinkChannel::new(DeliveryPolicy::Honest);
    let out = run_session(&mut channel, &reader, &controller, &[], cli.seed);
    let transcript: Vec<FrameView> = channel
        .log()
        .iter()
        .map(|f| FrameView {
            index: f.index,
            direction: f.direction,
            len: f.delivered.len(),
            hex: hex::encode(&f.delivered),
        })
        .collect();
    let report = json!({
        "seed": cli.seed,
        "established": out.established,
        "messages": out.messages_exchanged,
        "session_id": session_id(channel.log()),
        "reader_phase": out.reader_phase,
        "controller_phase": out.controller_phase,
        "failure": out.failure,
        "transcript": transcript,
    });
    emit(cli, &report, || {
        let mut s = match &out.failure {
            None => format!("established after {} messages\n", out.messages_exchanged),
            Some(f) => format!("failed at {}: {} ({})\n", f.blocked_at(), f.error, f.detail),
        };
        s.push_str(&channel.hex_dump());
        s
    });
    Ok(if out.established { 0 } else { 1 })
}

fn cmd_readout(cli: &Cli, mode: Mode, reports_path: &Path) -> CmdResult {
    let key = master_key(cli)?;
    let reports: Vec<BpcReport> = serde_json::from_str(&read_file(reports_path)?)
        .map_err(|e| Failure::usage(format!("{}: {e}", reports_path.display())))?;
    let store = Store::new(&cli.store);
    let mut locked = store.lock()?;
    let seq = locked.entries()?.len() as u32;
    let packet = match mode {
        Mode::Idle => {
            if reports.len() != 1 {
                return Err(Failure::usage(format!(
                    "idle readout carries exactly one report, got {}",
                    reports.len()
                )));
            }
            idle_packet(reports.into_iter().next().expect("one report"), seq)
        }
        Mode::Active => collect_from_bpcs(reports, seq),
    }
    .map_err(|e| Failure::usage(e.to_string()))?;

    let (reader, controller) = endpoints(key.clone(), key);
    let mut channel = LinkChannel::new(DeliveryPolicy::Honest);
    let out = run_session(
        &mut channel,
        &reader,
        &controller,
        std::slice::from_ref(&packet),
        cli.seed,
    );
    let sid = session_id(channel.log()).unwrap_or_default();
    if out.records_delivered != 1 {
        let report = json!({ "delivered": false, "session_id": sid, "failure": out.failure });
        emit(cli, &report, || {
            format!(
                "readout failed: {:?}\n",
                out.failure.as_ref().map(|f| f.blocked_at())
            )
        });
        return Ok(1);
    }
    let entry = PassportEntry {
        pack_id: packet.reports[0].pack_id,
        received_at: packet
            .reports
            .iter()
            .map(|r| r.timestamp)
            .max()
            .expect("non-empty"),
        session_id: sid.clone(),
        source: packet.use_case,
        diag: packet,
    };
    locked.append(&entry)?;
    let report = json!({
        "delivered": true,
        "session_id": sid,
        "source": entry.source,
        "reports": entry.diag.reports.len(),
        "sequence_no": entry.diag.sequence_no,
        "store": store.path(),
    });
    emit(cli, &report, || {
        format!(
            "stored {} packet with {} report(s), session {sid}\n",
            label(&entry.source),
            entry.diag.reports.len()
        )
    });
    Ok(0)
}

fn cmd_history(cli: &Cli, pack_id: &str) -> CmdResult {
    let pack =
        PackId::from_hex(pack_id).ok_or_else(|| Failure::usage("pack id must be 16 hex digits"))?;
    let entries = Store::new(&cli.store).history(&pack)?;
    emit(cli, &entries, || {
        entries
            .iter()
            .map(|e| {
                format!(
                    "{} {} session {} ({} reports)\n",
                    e.received_at,
                    label(&e.source),
                    e.session_id,
                    e.diag.reports.len()
                )
            })
            .collect()
    });
    Ok(0)
}

fn sim_failure(e: impl ToString) -> Failure {
    Failure {
        code: 5,
        kind: "simulation",
        detail: e.to_string(),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_wakeup_sim(
    cli: &Cli,
    method: MethodArg,
    days: f64,
    session_seconds: Option<f64>,
    scenario: Option<&Path>,
    model: Option<&Path>,
    trace: bool,
) -> CmdResult {
    let model: PowerModel = match model {
        Some(p) => serde_json::from_str(&read_file(p)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        None => PowerModel::default(),
    };
    let scenario: StorageScenario = match (scenario, session_seconds) {
        (Some(p), _) => serde_json::from_str(&read_file(p)?)
            .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?,
        (None, Some(s)) => {
            if days.fract() != 0.0 || days < 1.0 {
                return Err(Failure::usage(
                    "--session-seconds needs a whole number of days",
                ));
            }
            StorageScenario::daily(days as u32, s)
        }
        (None, None) => StorageScenario::idle(days),
    };
    let single = match method {
        MethodArg::Ed => Some(Method::Ed),
        MethodArg::Eh => Some(Method::Eh),
        MethodArg::Both => None,
    };
    if trace {
        let m = single.ok_or_else(|| Failure::usage("--trace needs --method ed or eh"))?;
        let t = simulate(&model, &scenario, m).map_err(sim_failure)?;
        let mut out = std::io::stdout().lock();
        for e in &t.events {
            let line = serde_json::to_string(e).expect("events serialize");
            if writeln!(out, "{line}").is_err() {
                break;
            }
        }
        return Ok(0);
    }
    let cmp = compare_methods(&model, &scenario).map_err(sim_failure)?;
    match single {
        Some(m) => {
            let s = if m == Method::Ed { &cmp.ed } else { &cmp.eh };
            let report = json!({
                "method": s.method,
                "duration_days": scenario.duration_days,
                "readouts": scenario.readouts.len(),
                "idle_power_uw": s.idle_power_uw,
                "avg_power_uw": s.avg_power_uw,
                "total_energy_uj": s.total_energy_uj,
                "wakeup_latency_ms": s.wakeup_latency_ms,
            });
            emit(cli, &report, || {
                format!(
                    "{}: avg {} uW, idle {} uW, wake-up {} ms\n",
                    label(&s.method),
                    s.avg_power_uw,
                    s.idle_power_uw,
                    s.wakeup_latency_ms
                )
            });
        }
        None => emit(cli, &cmp, || {
            format!(
                "ED: avg {} uW\nEH: avg {} uW\nalways on: avg {} uW\nlower power: {}, faster wake-up: {}\n",
                cmp.ed.avg_power_uw,
                cmp.eh.avg_power_uw,
                cmp.always_on_avg_power_uw,
                ranking(cmp.power_winner),
                ranking(cmp.latency_winner)
            )
        }),
    }
    Ok(0)
}

fn ranking(r: Ranking) -> &'static str {
    match r {
        Ranking::Ed => "ED",
        Ranking::Eh => "EH",
        Ranking::Tie => "tie",
    }
}

fn cmd_attack(cli: &Cli, strategy: &str, runs: usize, transcript: bool) -> CmdResult {
    let kinds: Vec<StrategyKind> = if strategy == "all" {
        StrategyKind::ALL.to_vec()
    } else {
        vec![StrategyKind::parse(strategy)
            .ok_or_else(|| Failure::usage(format!("unknown strategy `{strategy}`")))?]
    };
    if runs == 0 {
        return Err(Failure::usage("--runs must be at least 1"));
    }
    let report = run_attack_suite_with(cli.seed, &kinds, runs);
    let mut value = serde_json::to_value(&report).expect("reports serialize");
    if transcript {
        let dumps: serde_json::Map<String, serde_json::Value> = kinds
            .iter()
            .map(|&k| {
                let (_, _, ch) = run_attack(k, cli.seed, 0);
                (
                    k.name().to_string(),
                    ch.hex_dump().lines().collect::<Vec<_>>().into(),
                )
            })
            .collect();
        value["transcripts"] = dumps.into();
    }
    emit(cli, &value, || {
        let mut s = String::new();
        for r in &report.strategies {
            s.push_str(&format!(
                "{}: {} runs, {} blocked, {} successes, {} leaks\n",
                r.strategy.name(),
                r.runs,
                r.blocked,
                r.successes,
                r.leaks
            ));
            for (point, n) in &r.failure_points {
                s.push_str(&format!("  {point}: {n}\n"));
            }
        }
        s
    });
    Ok(if report.total_successes == 0 { 0 } else { 1 })
}

fn cmd_ban_verify(
    cli: &Cli,
    protocol: Option<&Path>,
    goals: Option<&Path>,
    max_depth: usize,
) -> CmdResult {
    let ptext = match protocol {
        Some(p) => read_file(p)?,
        None => BUNDLED_PROTOCOL.to_string(),
    };
    let gtext = match goals {
        Some(p) => read_file(p)?,
        None => BUNDLED_GOALS.to_string(),
    };
    let proto = Protocol::parse(&ptext).map_err(|e| Failure::usage(format!("protocol: {e}")))?;
    let goals = proto
        .parse_goals(&gtext)
        .map_err(|e| Failure::usage(format!("goals: {e}")))?;
    match derive(&proto.assumptions, &proto.messages, &goals, max_depth) {
        Ok(trace) => {
            let report = json!({
                "derived": true,
                "goals": goals.iter().map(|g| &g.label).collect::<Vec<_>>(),
                "steps": trace.steps.len(),
                "trace": trace,
            });
            emit(cli, &report, || trace.to_text());
            Ok(0)
        }
        Err(DeriveError::InvalidDepth) => Err(Failure::usage("--max-depth must be at least 1")),
        Err(e) => {
            let (kind, unreached) = match &e {
                DeriveError::NotDerivable { unreached } => ("not_derivable", unreached.clone()),
                DeriveError::DepthExceeded { unreached, .. } => {
                    ("depth_exceeded", unreached.clone())
                }
                DeriveError::InvalidDepth => unreachable!(),
            };
            let report = json!({ "derived": false, "error": kind, "unreached": unreached });
            emit(cli, &report, || format!("{e}\n"));
            Ok(4)
        }
    }
}
