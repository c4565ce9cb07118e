//! The `nviz` command line.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
//! Machine-readable output (`decode`, `state-at`, `export-log`, `simulate`)
//! goes to stdout; diagnostics go to stderr.
//!
//! `decode` prints one block per packet:
//!
//! ```text
//! UpdateTemperature{NodeAddress:3, VRef:367, Temperature:123}
//!   NodeAddress = 3
//!   VRef = 3.4124032697547686
//!   Temperature = 40.98882833787466
//! ```
//!
//! `state-at` prints the reconstructed state as a checkpoint document with
//! no logs.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{serialize_checkpoint, Checkpoint, CheckpointStore};
use crate::codec::{decode_packet, parse_hex_log, EpochMillis, RawPacket};
use crate::gateway::{serve, ServerConfig, SourceSpec};
use crate::ingest::{
    file_source, now_millis, record_source, simulator_source, write_packet_log, PacketSource, SimConfig,
};
use crate::model::{convert_fields, NetworkState};
use crate::replay::state_at;
use crate::spec::{PropertyKind, Specs};

#[derive(Debug, Parser)]
#[command(name = "nviz", version, about = "Schema-driven WSN telemetry: decode, record, replay, serve")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct SpecArgs {
    /// Network spec XML.
    #[arg(long)]
    net: PathBuf,
    /// Packet spec XML.
    #[arg(long)]
    pkt: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check both spec files and list packet types with their byte lengths.
    Validate(SpecArgs),
    /// Decode pipe-hex packets and print raw and converted values.
    Decode {
        #[command(flatten)]
        specs: SpecArgs,
        /// Packet in pipe-hex form, e.g. "0|2|0|3|1|6F|0|7B|". Repeatable.
        #[arg(long, required = true)]
        hex: Vec<String>,
    },
    /// Run the HTTP/WebSocket gateway until interrupted.
    Serve {
        #[command(flatten)]
        specs: SpecArgs,
        /// Store directory.
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// none | file:PATH | sim:seed=N,rate=R,count=C[,pace=BOOL] | tcp:ADDR
        #[arg(long, default_value = "none")]
        source: SourceSpec,
    },
    /// Write simulated packets as a packet-log file.
    Simulate {
        #[command(flatten)]
        specs: SpecArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Packets per second of simulated time.
        #[arg(long, default_value_t = 10.0)]
        rate: f64,
        #[arg(long, default_value_t = 1000)]
        count: u64,
        /// Timestamp of the first packet (epoch ms); defaults to now.
        #[arg(long)]
        start: Option<EpochMillis>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record a file or simulator source into a store without serving.
    Ingest {
        #[command(flatten)]
        specs: SpecArgs,
        #[arg(long)]
        store: PathBuf,
        /// file:PATH | sim:seed=N,rate=R,count=C
        #[arg(long)]
        source: SourceSpec,
        /// Leave the trailing logs pending instead of sealing them.
        #[arg(long)]
        no_seal: bool,
    },
    /// Print the network state at a time as checkpoint XML.
    StateAt {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        at: EpochMillis,
    },
    /// Write logs as a packet-log file: one checkpoint's logs with --at,
    /// else every log in the store.
    ExportLog {
        #[arg(long)]
        store: PathBuf,
        /// Checkpoint time.
        #[arg(long)]
        at: Option<EpochMillis>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure reported on stderr with exit code 1.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Runs the command line; returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let rendered = e.render().to_string();
            let _ = if code == 0 { out.write_all(rendered.as_bytes()) } else { err.write_all(rendered.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Validate(specs) => validate(&specs, out, err),
        Command::Decode { specs, hex } => decode(&specs, &hex, out),
        Command::Serve { specs, store, listen, source } => serve_until_interrupted(specs, store, listen, source, err),
        Command::Simulate { specs, seed, rate, count, start, out: path } => simulate(
            &specs,
            SimConfig { seed, rate, count, packet_mix: None, start_ms: start.unwrap_or_else(now_millis) },
            path,
            out,
        ),
        Command::Ingest { specs, store, source, no_seal } => ingest(&specs, &store, &source, !no_seal, err),
        Command::StateAt { store, at } => print_state_at(&store, at, out),
        Command::ExportLog { store, at, out: path } => export_log(&store, at, path, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure(message)) => {
            let _ = writeln!(err, "error: {message}");
            1
        }
    }
}

fn load(specs: &SpecArgs) -> Result<Specs, Failure> {
    Ok(Specs::load(&specs.net, &specs.pkt)?)
}

fn validate(args: &SpecArgs, out: &mut dyn Write, err: &mut dyn Write) -> CmdResult {
    let specs = load(args)?;
    for warning in specs.network.warnings() {
        writeln!(err, "warning: {warning}")?;
    }
    let counts: Vec<String> =
        PropertyKind::ALL.iter().map(|&k| format!("{} {}", specs.network.properties(k).len(), k.as_str())).collect();
    writeln!(out, "network: {}; LogPerCheckpoint={}", counts.join(", "), specs.network.log_per_checkpoint())?;
    writeln!(out, "packets: {} types, id length {}", specs.packets.packets().len(), specs.packets.packet_id_length())?;
    for format in specs.packets.packets() {
        writeln!(out, "{} {} {} bytes", format.packet_id, format.description, format.total_length())?;
    }
    Ok(())
}

fn decode(args: &SpecArgs, hex: &[String], out: &mut dyn Write) -> CmdResult {
    let specs = load(args)?;
    for text in hex {
        let bytes = parse_hex_log(text.trim()).map_err(|e| Failure(format!("{text:?}: {e}")))?;
        let packet = decode_packet(&RawPacket::new(bytes, 0), &specs.network, &specs.packets)
            .map_err(|e| Failure(format!("{text:?}: {e}")))?;
        let mut state = NetworkState::new();
        state.apply_packet(&packet).map_err(|e| Failure(format!("{text:?}: {e}")))?;
        let raw: Vec<String> = packet.fields().map(|(f, v)| format!("{}:{v}", f.name)).collect();
        writeln!(out, "{}{{{}}}", packet.format.description, raw.join(", "))?;
        for field in convert_fields(&packet, &state, &specs.network) {
            match (field.value.value, &field.value.error) {
                (Some(v), _) => writeln!(out, "  {} = {v}", field.field)?,
                (None, reason) => {
                    writeln!(out, "  {} = unconvertible ({})", field.field, reason.as_deref().unwrap_or("unknown"))?
                }
            }
        }
    }
    Ok(())
}

fn serve_until_interrupted(
    specs: SpecArgs,
    store: PathBuf,
    listen: SocketAddr,
    source: SourceSpec,
    err: &mut dyn Write,
) -> CmdResult {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let running = serve(ServerConfig::new(listen, store, specs.net, specs.pkt, source)).await?;
        writeln!(err, "listening on http://{}", running.local_addr())?;
        tokio::signal::ctrl_c().await?;
        writeln!(err, "shutting down")?;
        running.shutdown().await?;
        Ok(())
    })
}

fn open_output(
    path: Option<&Path>,
    stdout: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> CmdResult {
    match path {
        Some(path) => {
            let mut file = BufWriter::new(File::create(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?);
            write(&mut file)?;
            file.flush()?;
        }
        None => write(stdout)?,
    }
    Ok(())
}

fn simulate(args: &SpecArgs, cfg: SimConfig, path: Option<PathBuf>, out: &mut dyn Write) -> CmdResult {
    let specs = Arc::new(load(args)?);
    let sim = simulator_source(&cfg, specs)?;
    let packets = std::iter::from_fn({
        let mut sim = sim;
        move || sim.next_packet()
    });
    open_output(path.as_deref(), out, |w| write_packet_log(w, packets).map(drop))
}

fn ingest(args: &SpecArgs, store: &Path, source: &SourceSpec, seal: bool, err: &mut dyn Write) -> CmdResult {
    let specs = Arc::new(load(args)?);
    let mut src: Box<dyn PacketSource> = match source {
        SourceSpec::File(path) => Box::new(file_source(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?),
        SourceSpec::Sim { config, .. } => Box::new(simulator_source(config, Arc::clone(&specs))?),
        other => return Err(Failure(format!("ingest reads file: or sim: sources, not {other}"))),
    };
    let mut store = CheckpointStore::open(store, specs)?;
    let summary = record_source(src.as_mut(), &mut store, seal)?;
    writeln!(
        err,
        "applied {} packets, discarded {}, sealed {} checkpoints, {} logs pending",
        summary.applied,
        summary.discarded,
        summary.sealed.len(),
        store.pending().len()
    )?;
    Ok(())
}

fn print_state_at(store: &Path, at: EpochMillis, out: &mut dyn Write) -> CmdResult {
    let store = CheckpointStore::open_existing(store)?;
    let state = state_at(&store.history(), at, store.specs())?;
    let cp = Checkpoint { t: at, state: state.without_activity(), logs: Vec::new() };
    out.write_all(serialize_checkpoint(&cp).as_bytes())?;
    Ok(())
}

fn export_log(store: &Path, at: Option<EpochMillis>, path: Option<PathBuf>, out: &mut dyn Write) -> CmdResult {
    let store = CheckpointStore::open_existing(store)?;
    let logs: Vec<RawPacket> = match at {
        Some(t) => store.load_checkpoint(t)?.logs.iter().map(|l| l.to_raw()).collect(),
        None => store.history().logs().map(|l| l.to_raw()).collect(),
    };
    open_output(path.as_deref(), out, |w| write_packet_log(w, logs).map(drop))
}
