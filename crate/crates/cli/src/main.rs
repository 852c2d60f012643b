//! `skelehand` command-line tool.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | runtime or I/O failure |
//! | 2 | invalid arguments, manifest or configuration |
//! | 3 | scenario ran, but a grasp failed or an action was refused |
//! | 4 | corrupt input data (session record or trace CSV) |

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use skelehand::clock::{Clock, WallClock};
use skelehand::config::{ConfigSet, ENV_CONFIG_DIR};
use skelehand::coordinator::{Coordinator, CoordinatorConfig};
use skelehand::node::{self, FingerNode, NodeExit, RunOptions, StopFlag};
use skelehand::protocol::{self, Frame, Message};
use skelehand::record::{self, parse_session, Direction, Session};
use skelehand::scenario::{run_scenario, RunManifest};
use skelehand::server::{Hub, HubOptions};
use skelehand::touch::{detect_batch, read_trace, TraceError};
use skelehand::transport::TcpTransport;

#[derive(Parser)]
#[command(name = "skelehand", version, about = "Tendon-driven hand simulator and coordinator")]
struct Cli {
    /// Directory with configuration overrides. Falls back to $SKELEHAND_CONFIG_DIR.
    #[arg(long, global = true, value_name = "DIR")]
    config_dir: Option<PathBuf>,

    /// Log format on stderr.
    #[arg(long, global = true, value_enum, default_value_t = LogFormat::Text)]
    log_format: LogFormat,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scripted scenario on a simulated hand and write its artifacts.
    SimHand {
        manifest: PathBuf,
        /// Output directory; overrides the manifest's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the manifest's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the touch detector over a CSV angle trace.
    DetectTouch {
        input: PathBuf,
        /// Events CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Finger id stamped on events.
        #[arg(long, default_value_t = 1)]
        finger: u8,
    },
    /// Re-emit a session record with its original timing.
    Replay {
        session: PathBuf,
        /// Playback speed multiplier.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
    /// Print every frame of a session record as hex with its decoded fields.
    ProtocolDump { session: PathBuf },
    /// Run the live coordinator.
    Serve {
        /// Hand preset name or configuration file.
        #[arg(long, default_value = "five-finger")]
        hand: String,
        /// Address for finger nodes.
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        /// Address for JSON-lines consoles.
        #[arg(long, default_value = "127.0.0.1:7701")]
        ui: String,
        /// Write a session record here.
        #[arg(long)]
        record: Option<PathBuf>,
        /// Also run simulated nodes for every finger in-process.
        #[arg(long)]
        sim: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Stop after this many seconds; runs until killed when omitted.
        #[arg(long)]
        duration: Option<f64>,
        /// Default console snapshot rate, Hz.
        #[arg(long, default_value_t = 30.0)]
        snapshot_rate: f64,
    },
    /// Run one simulated finger node against a coordinator.
    Node {
        /// Coordinator address.
        #[arg(long, default_value = "127.0.0.1:7700")]
        connect: String,
        #[arg(long)]
        finger: u8,
        #[arg(long, default_value = "five-finger")]
        hand: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        duration: Option<f64>,
    },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail<E: Into<anyhow::Error>>(code: u8) -> impl FnOnce(E) -> Failure {
    move |e| Failure {
        code,
        error: e.into(),
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_format, cli.verbose);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn init_logging(format: LogFormat, verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr);
    match format {
        LogFormat::Text => builder.init(),
        LogFormat::Json => builder.json().init(),
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let presets = ConfigSet::load(cli.config_dir.as_deref())
        .with_context(|| format!("loading configuration (also see ${ENV_CONFIG_DIR})"))
        .map_err(fail(2))?;
    match cli.command {
        Command::SimHand {
            manifest,
            out,
            seed,
        } => sim_hand(&presets, &manifest, out, seed),
        Command::DetectTouch { input, out, finger } => detect_touch(&presets, &input, out.as_deref(), finger),
        Command::Replay { session, speed } => replay(&session, speed),
        Command::ProtocolDump { session } => protocol_dump(&session),
        Command::Serve {
            hand,
            listen,
            ui,
            record,
            sim,
            seed,
            duration,
            snapshot_rate,
        } => serve(
            &presets,
            ServeArgs {
                hand,
                listen,
                ui,
                record,
                sim,
                seed,
                duration,
                snapshot_rate,
            },
        ),
        Command::Node {
            connect,
            finger,
            hand,
            seed,
            duration,
        } => run_node(&presets, &connect, finger, &hand, seed, duration),
    }
}

fn sim_hand(presets: &ConfigSet, path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<u8, Failure> {
    let mut manifest = RunManifest::load(path, presets).map_err(fail(2))?;
    if let Some(s) = seed {
        manifest.seed = s;
    }
    let dir = out
        .or_else(|| manifest.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_scenario(&manifest, presets).map_err(fail(1))?;
    let files = outcome.write_to(&dir).map_err(fail(1))?;

    let mut stdout = io::stdout().lock();
    let _ = writeln!(stdout, "wrote {} files to {}", files.len(), dir.display());
    for r in &outcome.reports {
        let _ = writeln!(
            stdout,
            "grasp {:<20} {}",
            r.grasp,
            if r.success { "ok" } else { "FAILED" }
        );
    }
    let _ = writeln!(stdout, "touch events: {}", outcome.touches.len());
    for f in &outcome.failures {
        let _ = writeln!(stdout, "action at {} us failed: {}", f.at_us, f.error);
    }
    Ok(if outcome.is_clean() { 0 } else { 3 })
}

fn detect_touch(presets: &ConfigSet, input: &Path, out: Option<&Path>, finger: u8) -> Result<u8, Failure> {
    let file = fs::File::open(input)
        .with_context(|| format!("opening {}", input.display()))
        .map_err(fail(1))?;
    let samples = read_trace(BufReader::new(file)).map_err(|e| match e {
        TraceError::Malformed { .. } => Failure {
            code: 4,
            error: anyhow::Error::new(e).context(input.display().to_string()),
        },
        TraceError::Io(_) => Failure {
            code: 1,
            error: e.into(),
        },
    })?;
    let events = detect_batch(finger, &samples, presets.finger_defaults().detector);
    let mut csv = String::from("onset_us,finger_id,joint,peak\n");
    for e in &events {
        let _ = writeln!(csv, "{},{},{},{}", e.onset_us, e.finger_id, e.joint, e.peak);
    }
    match out {
        Some(p) => fs::write(p, csv)
            .with_context(|| format!("writing {}", p.display()))
            .map_err(fail(1))?,
        None => print!("{csv}"),
    }
    info!(samples = samples.len(), events = events.len(), "detect-touch done");
    Ok(0)
}

fn load_session(path: &Path) -> Result<Session, Failure> {
    let data = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(fail(1))?;
    parse_session(&data)
        .with_context(|| path.display().to_string())
        .map_err(fail(4))
}

fn direction_label(d: Direction) -> &'static str {
    match d {
        Direction::Inbound => "in",
        Direction::Outbound => "out",
        Direction::Local => "local",
    }
}

fn describe(frame: &Frame) -> String {
    let h = frame.header;
    let body = match &frame.message {
        Message::Hello {
            kind,
            geometry_hash,
        } => format!("HELLO kind={kind} geometry_hash={geometry_hash:#010x}"),
        Message::PoseTelemetry { angles } => format!(
            "POSE_TELEMETRY angles=[{:.6}, {:.6}, {:.6}]",
            angles[0].radians(),
            angles[1].radians(),
            angles[2].radians()
        ),
        Message::MotorTelemetry { spools } => format!(
            "MOTOR_TELEMETRY spools=[{:.6}, {:.6}]",
            spools[0].radians(),
            spools[1].radians()
        ),
        Message::SetMotorTargets {
            targets,
            rate_limit,
        } => format!(
            "SET_MOTOR_TARGETS targets=[{:.6}, {:.6}] rate_limit={rate_limit}",
            targets[0].radians(),
            targets[1].radians()
        ),
        Message::SetJointTargets { angles } => format!(
            "SET_JOINT_TARGETS angles=[{:.6}, {:.6}, {:.6}]",
            angles[0].radians(),
            angles[1].radians(),
            angles[2].radians()
        ),
        Message::TouchEvent { magnitude, joint } => format!("TOUCH_EVENT magnitude={magnitude} joint={joint}"),
        Message::Heartbeat => "HEARTBEAT".to_string(),
        Message::Error { code, text } => format!("ERROR code={code} text={text:?}"),
        Message::InjectTouch {
            force_un,
            duration_ms,
        } => format!("INJECT_TOUCH force_un={force_un:?} duration_ms={duration_ms}"),
    };
    format!("finger={} seq={} ts={} {body}", h.finger_id, h.seq, h.timestamp_us)
}

fn replay(path: &Path, speed: f64) -> Result<u8, Failure> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(fail(2)(anyhow::anyhow!("--speed must be positive, got {speed}")));
    }
    let session = load_session(path)?;
    let clock = WallClock::new();
    let mut stdout = io::stdout().lock();
    let n = record::replay(&session, speed, &clock, |e, f| {
        let _ = writeln!(
            stdout,
            "{:>12} {:<5} {}",
            e.arrival_us,
            direction_label(e.direction),
            describe(f)
        );
    })
    .map_err(fail(4))?;
    info!(frames = n, elapsed_us = clock.now_us(), "replay done");
    Ok(0)
}

fn protocol_dump(path: &Path) -> Result<u8, Failure> {
    let session = load_session(path)?;
    let mut stdout = io::stdout().lock();
    let h = &session.header;
    let _ = writeln!(
        stdout,
        "session protocol={} start_us={} entries={} config_bytes={}",
        h.protocol_version,
        h.start_us,
        session.entries.len(),
        h.config.len()
    );
    for (i, e) in session.entries.iter().enumerate() {
        let hex: Vec<String> = e.bytes.iter().map(|b| format!("{b:02x}")).collect();
        let decoded = match protocol::decode(&e.bytes) {
            Ok((f, used)) if used == e.bytes.len() => describe(&f),
            Ok((_, used)) => {
                let _ = stdout.flush();
                return Err(fail(4)(anyhow::anyhow!(
                    "entry {i}: {} trailing bytes after frame",
                    e.bytes.len() - used
                )));
            }
            Err(err) => {
                let _ = writeln!(stdout, "#{i} t={} {} CORRUPT", e.arrival_us, direction_label(e.direction));
                let _ = writeln!(stdout, "    {}", hex.join(" "));
                let _ = stdout.flush();
                return Err(fail(4)(anyhow::anyhow!("entry {i}: {err}")));
            }
        };
        let _ = writeln!(
            stdout,
            "#{i} t={} {} {decoded}",
            e.arrival_us,
            direction_label(e.direction)
        );
        let _ = writeln!(stdout, "    {}", hex.join(" "));
    }
    Ok(0)
}

struct ServeArgs {
    hand: String,
    listen: String,
    ui: String,
    record: Option<PathBuf>,
    sim: bool,
    seed: u64,
    duration: Option<f64>,
    snapshot_rate: f64,
}

fn serve(presets: &ConfigSet, args: ServeArgs) -> Result<u8, Failure> {
    let hand = presets.hand(&args.hand).map_err(fail(2))?;
    if !(args.snapshot_rate > 0.0) {
        return Err(fail(2)(anyhow::anyhow!("--snapshot-rate must be positive")));
    }
    let coord_cfg = CoordinatorConfig::from_presets(presets, hand.clone()).map_err(fail(2))?;
    let record = match &args.record {
        Some(p) => {
            let f = fs::File::create(p)
                .with_context(|| format!("creating {}", p.display()))
                .map_err(fail(1))?;
            Some(Box::new(io::BufWriter::new(f)) as Box<dyn Write + Send>)
        }
        None => None,
    };
    let mut hub = Hub::spawn(
        Coordinator::new(coord_cfg),
        HubOptions {
            snapshot_rate: args.snapshot_rate,
            record,
            config_snapshot: format!("hand = {:?}\nseed = {}\n", args.hand, args.seed),
            ..Default::default()
        },
    )
    .map_err(fail(1))?;
    let node_addr = hub.listen_nodes(&args.listen).map_err(fail(1))?;
    let ui_addr = hub.listen_ui(&args.ui).map_err(fail(1))?;
    println!("nodes on {node_addr}, consoles on {ui_addr}");

    let stop = StopFlag::new();
    let mut workers = Vec::new();
    if args.sim {
        for entry in hand.entries() {
            let cfg = presets.node_config(entry, args.seed).map_err(fail(2))?;
            let mut transport = hub.attach_channel().map_err(fail(1))?;
            let opts = RunOptions {
                stop: stop.clone(),
                until_us: None,
            };
            let id = entry.id;
            workers.push(thread::spawn(move || {
                let mut node = match FingerNode::new(cfg) {
                    Ok(n) => n,
                    Err(e) => {
                        warn!(finger_id = id, error = %e, "node failed to start");
                        return;
                    }
                };
                if let Err(e) = node::run(&mut node, &mut transport, &WallClock::new(), &opts) {
                    warn!(finger_id = id, error = %e, "node stopped with error");
                }
            }));
        }
    }

    match args.duration {
        Some(d) => thread::sleep(Duration::from_secs_f64(d.max(0.0))),
        None => loop {
            thread::park();
        },
    }
    stop.stop();
    for w in workers {
        let _ = w.join();
    }
    let summary = hub.stop().map_err(fail(1))?;
    println!(
        "served {:.3} s: {} grasp reports, {} touch events",
        summary.duration_us as f64 / 1e6,
        summary.reports.len(),
        summary.touches.len()
    );
    Ok(0)
}

fn run_node(
    presets: &ConfigSet,
    addr: &str,
    finger: u8,
    hand: &str,
    seed: u64,
    duration: Option<f64>,
) -> Result<u8, Failure> {
    let hand = presets.hand(hand).map_err(fail(2))?;
    let entry = hand
        .entry(finger)
        .ok_or_else(|| anyhow::anyhow!("finger {finger} is not part of hand {:?}", hand.name()))
        .map_err(fail(2))?;
    let cfg = presets.node_config(entry, seed).map_err(fail(2))?;
    let mut node = FingerNode::new(cfg).map_err(fail(2))?;
    let mut transport = TcpTransport::connect(addr)
        .with_context(|| format!("connecting to {addr}"))
        .map_err(fail(1))?;
    let opts = RunOptions {
        stop: StopFlag::new(),
        until_us: duration.map(|d| (d * 1e6).round() as u64),
    };
    let exit = node::run(&mut node, &mut transport, &WallClock::new(), &opts).map_err(fail(1))?;
    info!(finger_id = finger, ?exit, "node exited");
    match exit {
        NodeExit::Stopped | NodeExit::DeadlineReached => Ok(0),
        NodeExit::Rejected => Err(fail(1)(anyhow::anyhow!("coordinator rejected finger {finger}"))),
        NodeExit::TransportLost => Err(fail(1)(anyhow::anyhow!("lost connection to {addr}"))),
    }
}
