use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use holosync::pointcloud::{write_recording, RecordingHeader, SyntheticScene, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use holosync::server::{self, ServerConfig, DEFAULT_PORT, PORT_ENV};
use holosync::sim::{self, InputRecord, LogRecord};

const EXIT_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(name = "holosync", version, about = "Holographic cross-device interaction server and tools")]
struct Cli {
    /// More log output; repeat for more detail.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the WebSocket session server until interrupted.
    Serve {
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        /// Directory for session files; sessions are kept in memory only if unset.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 60.0)]
        tick_hz: f64,
    },
    /// Run a scenario file (or a bundled scenario) and print its expectation report.
    Run {
        /// Path to a scenario file, or `bundled:<name>`.
        scenario: String,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the interaction event log here, one record per line.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Write the server input log here, for `replay`.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Also print run metrics.
        #[arg(long)]
        metrics: bool,
    },
    /// Rebuild a run from its input log and optionally compare event logs.
    Replay {
        inputs: PathBuf,
        /// Event log to compare against; a mismatch exits with status 1.
        #[arg(long)]
        expect: Option<PathBuf>,
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Write a synthetic depth recording.
    GenDepth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 30)]
        frames: u32,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: u32,
        #[arg(long, default_value_t = DEFAULT_HEIGHT)]
        height: u32,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a running server's metrics.
    Metrics {
        #[arg(long, env = PORT_ENV, default_value_t = DEFAULT_PORT, value_parser = clap::value_parser!(u16).range(1..))]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// A failure with the exit status it maps to.
struct Failure(u8, String);

fn usage(msg: impl Into<String>) -> Failure {
    Failure(EXIT_USAGE, msg.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Cmd::Serve { port, data_dir, tick_hz } => serve(port, data_dir, tick_hz),
        Cmd::Run { scenario, seed, events, inputs, metrics } => run(&scenario, seed, events, inputs, metrics),
        Cmd::Replay { inputs, expect, events } => replay(&inputs, expect, events),
        Cmd::GenDepth { output, frames, width, height, fps, seed } => gen_depth(&output, frames, width, height, fps, seed),
        Cmd::Metrics { port, host } => metrics(&host, port),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("holosync: {msg}");
            }
            ExitCode::from(code)
        }
    }
}

fn serve(port: u16, data_dir: Option<PathBuf>, tick_hz: f64) -> Result<(), Failure> {
    if !(tick_hz.is_finite() && tick_hz > 0.0) {
        return Err(usage("--tick-hz must be positive"));
    }
    let mut config = ServerConfig { port, data_dir, ..ServerConfig::default() };
    config.engine.tick_hz = tick_hz;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure(EXIT_FAILED, e.to_string()))?;
    rt.block_on(async move {
        let running = server::start(config).await.map_err(|e| Failure(EXIT_FAILED, e.to_string()))?;
        println!("listening on {}", running.addr);
        tokio::signal::ctrl_c().await.map_err(|e| Failure(EXIT_FAILED, e.to_string()))?;
        log::info!("interrupted, saving sessions");
        running.shutdown().await.map_err(|e| Failure(EXIT_FAILED, e.to_string()))
    })
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn run(source: &str, seed: Option<u64>, events: Option<PathBuf>, inputs: Option<PathBuf>, show_metrics: bool) -> Result<(), Failure> {
    let mut scenario = match source.strip_prefix("bundled:") {
        Some(name) => sim::bundled(name).ok_or_else(|| {
            let names: Vec<&str> = sim::BUNDLED.iter().map(|(n, _)| *n).collect();
            usage(format!("no bundled scenario {name:?}; choose from {}", names.join(", ")))
        })?,
        None => {
            let path = Path::new(source);
            sim::load_scenario(&read_text(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let outcome = sim::run_scenario(&scenario);
    let report = sim::assert_expectations(&scenario, &outcome);
    print!("{report}");
    if show_metrics {
        println!("{}", serde_json::to_string(&outcome.metrics).expect("metrics serialize"));
    }
    println!("state_hash {}", outcome.state_hash());
    if let Some(p) = events {
        write_file(&p, &sim::export_lines(&outcome.events))?;
    }
    if let Some(p) = inputs {
        write_file(&p, &sim::export_lines(&outcome.inputs))?;
    }
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.failed().map(|r| r.name.as_str()).collect();
        Err(Failure(EXIT_FAILED, format!("failed: {}", failed.join(", "))))
    }
}

fn replay(inputs: &Path, expect: Option<PathBuf>, events_out: Option<PathBuf>) -> Result<(), Failure> {
    let records: Vec<InputRecord> =
        sim::parse_lines(&read_text(inputs)?).map_err(|e| usage(format!("{}: {e}", inputs.display())))?;
    let (events, state) = sim::replay_inputs(&records).map_err(|e| usage(format!("{}: {e}", inputs.display())))?;
    println!("events {}", events.len());
    println!("state_hash {}", state.state_hash());
    if let Some(p) = events_out {
        write_file(&p, &sim::export_lines(&events))?;
    }
    if let Some(p) = expect {
        let want: Vec<LogRecord> = sim::parse_lines(&read_text(&p)?).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        if want != events {
            let at = want.iter().zip(&events).position(|(a, b)| a != b).unwrap_or(want.len().min(events.len()));
            return Err(Failure(EXIT_FAILED, format!("event logs differ at record {at}")));
        }
        println!("event log matches");
    }
    Ok(())
}

fn gen_depth(output: &Path, frames: u32, width: u32, height: u32, fps: f64, seed: u64) -> Result<(), Failure> {
    if width == 0 || height == 0 || !(fps.is_finite() && fps > 0.0) {
        return Err(usage("width, height and fps must be positive"));
    }
    let scene = SyntheticScene { width, height, fps, seed };
    let header = RecordingHeader { width, height, intrinsics: scene.intrinsics() };
    let file = File::create(output).map_err(|e| usage(format!("{}: {e}", output.display())))?;
    let mut out = BufWriter::new(file);
    let written = write_recording(&mut out, &header, (0..frames).map(|i| scene.frame(i)))
        .map_err(|e| usage(format!("{}: {e}", output.display())))?;
    out.flush().map_err(|e| usage(format!("{}: {e}", output.display())))?;
    println!("wrote {written} frames to {}", output.display());
    Ok(())
}

/// A plain HTTP/1.0 GET; the endpoint is local and tiny.
fn metrics(host: &str, port: u16) -> Result<(), Failure> {
    let mut stream = TcpStream::connect((host, port)).map_err(|e| usage(format!("{host}:{port}: {e}")))?;
    write!(stream, "GET /metrics HTTP/1.0\r\nHost: {host}\r\n\r\n").map_err(|e| usage(e.to_string()))?;
    let mut response = String::new();
    stream.read_to_string(&mut response).map_err(|e| usage(e.to_string()))?;
    let (head, body) = response.split_once("\r\n\r\n").unwrap_or((response.as_str(), ""));
    if !head.starts_with("HTTP/1.") || !head.split_whitespace().nth(1).is_some_and(|c| c == "200") {
        return Err(usage(format!("unexpected response: {}", head.lines().next().unwrap_or(""))));
    }
    print!("{body}");
    Ok(())
}
