//! Packet access: timestamped raw packets from a log file, the built-in
//! simulator, or a live TCP byte stream.
//!
//! Packet-log file format, one packet per line (UTF-8, LF):
//!
//! ```text
//! <epoch_ms> <pipe-hex>
//! 1328163457311 0|2|0|3|1|6F|0|7B|
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::checkpoint::{CheckpointMeta, CheckpointStore, StoreError};
use crate::codec::{
    decode_packet, encode_packet, format_hex_log, parse_hex_log, EpochMillis, HexLogError, ParsedPacket, RawPacket,
};
use crate::model::NetworkState;
use crate::replay::{state_at, ReplayError};
use crate::spec::{PacketFormat, Specs};

/// A producer of raw packets with non-decreasing timestamps.
pub trait PacketSource: Send {
    /// Blocks until the next packet is available; `None` is end of stream.
    fn next_packet(&mut self) -> Option<RawPacket>;
}

impl<S: PacketSource + ?Sized> PacketSource for Box<S> {
    fn next_packet(&mut self) -> Option<RawPacket> {
        (**self).next_packet()
    }
}

pub fn now_millis() -> EpochMillis {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as EpochMillis)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogLineError {
    #[error("expected '<epoch_ms> <pipe-hex>'")]
    Shape,
    #[error("bad timestamp {0:?}")]
    Timestamp(String),
    #[error("empty packet")]
    Empty,
    #[error(transparent)]
    Hex(#[from] HexLogError),
}

pub fn format_log_line(raw: &RawPacket) -> String {
    format!("{} {}\n", raw.received_at, format_hex_log(&raw.bytes))
}

pub fn parse_log_line(line: &str) -> Result<RawPacket, LogLineError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let (t, hex) = line.split_once(' ').ok_or(LogLineError::Shape)?;
    if hex.contains(' ') {
        return Err(LogLineError::Shape);
    }
    if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
        return Err(LogLineError::Timestamp(t.to_string()));
    }
    let t: EpochMillis = t.parse().map_err(|_| LogLineError::Timestamp(t.to_string()))?;
    let bytes = parse_hex_log(hex)?;
    if bytes.is_empty() {
        return Err(LogLineError::Empty);
    }
    Ok(RawPacket::new(bytes, t))
}

/// Writes packets in the packet-log file format.
pub fn write_packet_log<W: Write>(mut out: W, packets: impl IntoIterator<Item = RawPacket>) -> io::Result<usize> {
    let mut n = 0;
    for p in packets {
        out.write_all(format_log_line(&p).as_bytes())?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedLine {
    pub line: usize,
    pub reason: String,
}

/// Reads a packet-log file, skipping (and remembering) malformed lines.
pub struct FileSource {
    lines: Box<dyn Iterator<Item = io::Result<String>> + Send>,
    line_no: usize,
    last_t: EpochMillis,
    skipped: Vec<MalformedLine>,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(Self::from_reader(BufReader::new(file)))
    }

    pub fn from_reader<R: BufRead + Send + 'static>(reader: R) -> Self {
        FileSource { lines: Box::new(reader.lines()), line_no: 0, last_t: 0, skipped: Vec::new() }
    }

    pub fn skipped(&self) -> &[MalformedLine] {
        &self.skipped
    }
}

impl fmt::Debug for FileSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FileSource").field("line_no", &self.line_no).field("skipped", &self.skipped).finish()
    }
}

impl PacketSource for FileSource {
    fn next_packet(&mut self) -> Option<RawPacket> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.line_no += 1;
                    self.skipped.push(MalformedLine { line: self.line_no, reason: e.to_string() });
                    if e.kind() == io::ErrorKind::InvalidData {
                        continue;
                    }
                    return None;
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            match parse_log_line(&line) {
                Ok(raw) if raw.received_at < self.last_t => self.skipped.push(MalformedLine {
                    line: self.line_no,
                    reason: format!("timestamp {} goes backwards (previous {})", raw.received_at, self.last_t),
                }),
                Ok(raw) => {
                    self.last_t = raw.received_at;
                    return Some(raw);
                }
                Err(e) => {
                    tracing::warn!(line = self.line_no, error = %e, "skipping malformed packet-log line");
                    self.skipped.push(MalformedLine { line: self.line_no, reason: e.to_string() });
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Packets per second of simulated time.
    pub rate: f64,
    pub count: u64,
    /// Relative weight per packet ID; absent means uniform over all types.
    pub packet_mix: Option<BTreeMap<u64, f64>>,
    /// Timestamp of the first packet.
    pub start_ms: EpochMillis,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { seed: 0, rate: 10.0, count: 1000, packet_mix: None, start_ms: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimConfigError {
    #[error("rate must be a positive finite number, got {0}")]
    Rate(f64),
    #[error("packet mix weights must be non-negative, finite and not all zero")]
    Weights,
    #[error("packet mix names unknown packet type {0}")]
    UnknownPacket(u64),
    #[error("the packet spec defines no packet types")]
    NoPackets,
}

/// Deterministic packet generator: the same seed yields the same stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    specs: Arc<Specs>,
    formats: Vec<Arc<PacketFormat>>,
    chooser: Option<WeightedIndex<f64>>,
    rng: ChaCha8Rng,
    interval_ms: f64,
    start_ms: EpochMillis,
    emitted: u64,
    count: u64,
}

impl Simulator {
    pub fn new(cfg: &SimConfig, specs: Arc<Specs>) -> Result<Self, SimConfigError> {
        if !(cfg.rate.is_finite() && cfg.rate > 0.0) {
            return Err(SimConfigError::Rate(cfg.rate));
        }
        let all: Vec<Arc<PacketFormat>> = specs.packets.packets().to_vec();
        if all.is_empty() {
            return Err(SimConfigError::NoPackets);
        }
        let (formats, chooser) = match &cfg.packet_mix {
            None => (all, None),
            Some(mix) => {
                let mut formats = Vec::new();
                let mut weights = Vec::new();
                for (&id, &w) in mix {
                    let format = specs.packets.get(id).ok_or(SimConfigError::UnknownPacket(id))?;
                    if !(w.is_finite() && w >= 0.0) {
                        return Err(SimConfigError::Weights);
                    }
                    formats.push(Arc::clone(format));
                    weights.push(w);
                }
                let chooser = WeightedIndex::new(&weights).map_err(|_| SimConfigError::Weights)?;
                (formats, Some(chooser))
            }
        };
        Ok(Simulator {
            specs,
            formats,
            chooser,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            interval_ms: 1000.0 / cfg.rate,
            start_ms: cfg.start_ms,
            emitted: 0,
            count: cfg.count,
        })
    }

    /// Next packet before encoding; every value lies within its property's
    /// `[min, max]`.
    pub fn next_parsed(&mut self) -> Option<ParsedPacket> {
        if self.emitted >= self.count {
            return None;
        }
        let format = match &self.chooser {
            Some(w) => &self.formats[w.sample(&mut self.rng)],
            None => &self.formats[self.rng.random_range(0..self.formats.len())],
        };
        let values = format
            .fields
            .iter()
            .map(|f| {
                let p = self.specs.network.lookup(f.kind, f.property_id).expect("resolved field");
                self.rng.random_range(p.min..=p.max)
            })
            .collect();
        let received_at = self.start_ms + (self.emitted as f64 * self.interval_ms).floor() as EpochMillis;
        self.emitted += 1;
        Some(ParsedPacket { format: Arc::clone(format), values, received_at })
    }
}

impl PacketSource for Simulator {
    fn next_packet(&mut self) -> Option<RawPacket> {
        let parsed = self.next_parsed()?;
        let bytes = encode_packet(&parsed).expect("simulated values fit their fields");
        Some(RawPacket::new(bytes, parsed.received_at))
    }
}

pub fn simulator_source(cfg: &SimConfig, specs: Arc<Specs>) -> Result<Simulator, SimConfigError> {
    Simulator::new(cfg, specs)
}

pub fn file_source(path: impl AsRef<Path>) -> io::Result<FileSource> {
    FileSource::open(path)
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot rebuild the store's latest state: {0}")]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Clone, Default)]
pub struct RecordSummary {
    pub applied: u64,
    pub discarded: u64,
    pub sealed: Vec<CheckpointMeta>,
    /// State after the last packet.
    pub state: NetworkState,
}

/// Drains `source` into `store` without a server: decode, apply, record.
/// Continues from the store's latest state; timestamps earlier than the
/// last recorded log are raised to it. Bad packets are counted and skipped.
/// With `seal`, pending logs are sealed into a final checkpoint.
pub fn record_source(
    source: &mut dyn PacketSource,
    store: &mut CheckpointStore,
    seal: bool,
) -> Result<RecordSummary, RecordError> {
    let specs = Arc::clone(store.specs());
    let history = store.history();
    let mut summary = RecordSummary::default();
    let mut last_t = 0;
    if let Some(t) = history.last_time() {
        summary.state = state_at(&history, t, &specs)?;
        last_t = history.logs().last().map_or(0, |l| l.t);
    }
    while let Some(mut raw) = source.next_packet() {
        raw.received_at = raw.received_at.max(last_t);
        let applied = match decode_packet(&raw, &specs.network, &specs.packets) {
            Ok(p) => summary.state.apply_packet(&p).map(drop).map_err(|e| e.to_string()),
            Err(e) => {
                summary.state.discard_count += 1;
                Err(e.to_string())
            }
        };
        if let Err(reason) = applied {
            tracing::debug!(t = raw.received_at, %reason, "packet discarded");
            summary.discarded += 1;
            continue;
        }
        summary.applied += 1;
        last_t = raw.received_at;
        if let Some(cp) = store.record(&raw, &summary.state)? {
            summary.sealed.push(cp.meta());
        }
    }
    if seal {
        if let Some(cp) = store.seal_pending(&summary.state)? {
            summary.sealed.push(cp.meta());
        }
    }
    Ok(summary)
}

/// Poll interval for blocking reads; bounds how long cancellation can go
/// unnoticed.
const POLL: Duration = Duration::from_millis(50);

/// Live source accepting TCP connections that carry length-prefixed frames
/// (2-byte big-endian length, then the packet). Packets are stamped with the
/// wall clock on arrival. One connection is served at a time; when it
/// closes the listener waits for the next one.
#[derive(Debug)]
pub struct TcpSource {
    listener: TcpListener,
    conn: Option<TcpStream>,
    cancel: Arc<AtomicBool>,
    last_t: EpochMillis,
}

impl TcpSource {
    pub fn bind(addr: impl std::net::ToSocketAddrs, cancel: Arc<AtomicBool>) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(TcpSource { listener, conn: None, cancel, last_t: 0 })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }

    /// Fills `buf` completely. `Ok(false)` means the peer closed the stream
    /// before the first byte.
    fn read_exact_cancellable(&mut self, buf: &mut [u8]) -> io::Result<bool> {
        let mut filled = 0;
        while filled < buf.len() {
            if self.cancelled() {
                return Err(io::Error::new(io::ErrorKind::Interrupted, "cancelled"));
            }
            let conn = self.conn.as_mut().expect("connected");
            match conn.read(&mut buf[filled..]) {
                Ok(0) if filled == 0 => return Ok(false),
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => filled += n,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(true)
    }
}

impl PacketSource for TcpSource {
    fn next_packet(&mut self) -> Option<RawPacket> {
        loop {
            if self.cancelled() {
                return None;
            }
            if self.conn.is_none() {
                match self.listener.accept() {
                    Ok((stream, peer)) => {
                        tracing::info!(%peer, "packet source connected");
                        let ok = stream.set_nonblocking(false).is_ok() && stream.set_read_timeout(Some(POLL)).is_ok();
                        if ok {
                            self.conn = Some(stream);
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                    Err(e) => {
                        tracing::warn!(error = %e, "accept failed");
                        std::thread::sleep(POLL);
                    }
                }
                continue;
            }
            let mut header = [0u8; 2];
            match self.read_exact_cancellable(&mut header) {
                Ok(true) => {}
                Ok(false) => {
                    self.conn = None;
                    continue;
                }
                Err(e) => {
                    if self.cancelled() {
                        return None;
                    }
                    tracing::warn!(error = %e, "dropping packet source connection");
                    self.conn = None;
                    continue;
                }
            }
            let mut payload = vec![0u8; usize::from(u16::from_be_bytes(header))];
            match self.read_exact_cancellable(&mut payload) {
                Ok(true) => {}
                Ok(false) if payload.is_empty() => {}
                _ => {
                    if self.cancelled() {
                        return None;
                    }
                    self.conn = None;
                    continue;
                }
            }
            if payload.is_empty() {
                continue;
            }
            let t = now_millis().max(self.last_t);
            self.last_t = t;
            return Some(RawPacket::new(payload, t));
        }
    }
}

/// Writes one frame for [`TcpSource`].
pub fn write_frame<W: Write>(mut out: W, packet: &[u8]) -> io::Result<()> {
    let len = u16::try_from(packet.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too long"))?;
    out.write_all(&len.to_be_bytes())?;
    out.write_all(packet)
}
