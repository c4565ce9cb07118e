//! HTTP + WebSocket service: specs, live state, checkpoints and replay
//! sessions over one ingest pipeline.
//!
//! The pipeline is the single writer. For each packet it decodes, applies,
//! records to the store and only then broadcasts, all under one lock, so a
//! state read through `/api/state` is always reproducible from the
//! checkpoints plus the pending journal.
//!
//! ```text
//! GET    /api/spec/network            raw network spec XML
//! GET    /api/spec/packet             raw packet spec XML
//! GET    /api/state                   raw + converted snapshot
//! GET    /api/status                  counters and source progress
//! GET    /api/checkpoints?from&to     checkpoint metadata
//! GET    /api/checkpoints/{t}         checkpoint XML
//! POST   /api/simulate                inject one packet (pipe-hex body)
//! POST   /api/replay/sessions         {"at": t}
//! GET    /api/replay/{id}             cursor, status and state
//! POST   /api/replay/{id}/play        {"speed": s}
//! POST   /api/replay/{id}/pause
//! POST   /api/replay/{id}/seek        {"at": t}
//! POST   /api/replay/{id}/step        {"dir": "forward" | "backward"}
//! DELETE /api/replay/{id}
//! WS     /ws/live                     packet / diff / discard / checkpoint
//! WS     /ws/replay/{id}              diff / full_state / ended
//! ```
//!
//! Errors are JSON `{"code": ..., "message": ...}`.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::checkpoint::{CheckpointMeta, CheckpointStore, StoreError};
use crate::codec::{decode_packet, format_hex_log, parse_hex_log, EpochMillis, RawPacket};
use crate::ingest::{now_millis, FileSource, PacketSource, SimConfig, Simulator, TcpSource};
use crate::model::{convert_fields, converted_view, ConvertedField, ConvertedState, NetworkState, StateDiff};
use crate::replay::{state_at, Direction, Playback, PlaybackStatus, ReplayError, ReplaySession, SeekOutcome};
use crate::spec::{LoadError, Specs};

/// Events buffered per live subscriber before it is disconnected.
pub const DEFAULT_EVENT_BUFFER: usize = 1024;

const INPUT_QUEUE: usize = 1024;
const PACE_SLICE: Duration = Duration::from_millis(50);
const SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

/// Where the pipeline gets packets from.
///
/// Textual form: `none`, `file:PATH`, `tcp:ADDR` or
/// `sim:seed=N,rate=R,count=C[,pace=true|false]`. A paced simulator emits
/// packets at wall-clock speed starting at server start; an unpaced one
/// emits as fast as the pipeline accepts them.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    None,
    File(PathBuf),
    Sim { config: SimConfig, pace: bool },
    Tcp(SocketAddr),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid source {input:?}: {reason}")]
pub struct SourceParseError {
    pub input: String,
    pub reason: String,
}

impl FromStr for SourceSpec {
    type Err = SourceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| SourceParseError { input: s.to_string(), reason: reason.to_string() };
        if s == "none" {
            return Ok(SourceSpec::None);
        }
        let (kind, rest) = s.split_once(':').ok_or_else(|| err("expected none, file:PATH, sim:... or tcp:ADDR"))?;
        match kind {
            "file" if !rest.is_empty() => Ok(SourceSpec::File(PathBuf::from(rest))),
            "file" => Err(err("missing path")),
            "tcp" => {
                rest.parse().map(SourceSpec::Tcp).map_err(|_| err("expected a socket address such as 127.0.0.1:9000"))
            }
            "sim" => {
                let mut config = SimConfig::default();
                let mut pace = true;
                for pair in rest.split(',').filter(|p| !p.is_empty()) {
                    let (key, value) = pair.split_once('=').ok_or_else(|| err("expected key=value pairs"))?;
                    let bad = || err(&format!("bad value for {key}"));
                    match key {
                        "seed" => config.seed = value.parse().map_err(|_| bad())?,
                        "rate" => config.rate = value.parse().map_err(|_| bad())?,
                        "count" => config.count = value.parse().map_err(|_| bad())?,
                        "pace" => pace = value.parse().map_err(|_| bad())?,
                        _ => return Err(err(&format!("unknown key {key}"))),
                    }
                }
                Ok(SourceSpec::Sim { config, pace })
            }
            _ => Err(err(&format!("unknown source kind {kind}"))),
        }
    }
}

impl fmt::Display for SourceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceSpec::None => f.write_str("none"),
            SourceSpec::File(p) => write!(f, "file:{}", p.display()),
            SourceSpec::Sim { config, pace } => {
                write!(f, "sim:seed={},rate={},count={},pace={pace}", config.seed, config.rate, config.count)
            }
            SourceSpec::Tcp(a) => write!(f, "tcp:{a}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub listen: SocketAddr,
    pub store_dir: PathBuf,
    pub net_path: PathBuf,
    pub pkt_path: PathBuf,
    pub source: SourceSpec,
    pub event_buffer: usize,
}

impl ServerConfig {
    pub fn new(
        listen: SocketAddr,
        store_dir: impl Into<PathBuf>,
        net_path: impl Into<PathBuf>,
        pkt_path: impl Into<PathBuf>,
        source: SourceSpec,
    ) -> Self {
        ServerConfig {
            listen,
            store_dir: store_dir.into(),
            net_path: net_path.into(),
            pkt_path: pkt_path.into(),
            source,
            event_buffer: DEFAULT_EVENT_BUFFER,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error(transparent)]
    Spec(#[from] LoadError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot rebuild state from the store: {0}")]
    Replay(#[from] ReplayError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("cannot start source {source_spec}: {reason}")]
    Source { source_spec: String, reason: String },
    #[error("server task failed: {0}")]
    Join(String),
}

/// Decoded field values of a packet, with conversions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketView {
    pub t: EpochMillis,
    pub packet_id: u64,
    pub description: String,
    pub fields: Vec<ConvertedField>,
}

/// Events on `/ws/live`, in pipeline order.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LiveEvent {
    Packet(PacketView),
    Diff { t: EpochMillis, diff: StateDiff },
    Discard { t: EpochMillis, p: String, reason: String },
    Checkpoint(CheckpointMeta),
}

/// What happened to one packet.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Ingested {
    Applied { packet: PacketView, changes: usize, checkpoint: Option<CheckpointMeta> },
    Discarded { t: EpochMillis, reason: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct ServiceStatus {
    pub source: String,
    pub source_done: bool,
    pub packet_count: u64,
    pub discard_count: u64,
    pub checkpoints: usize,
    pub pending_logs: usize,
    pub last_t: Option<EpochMillis>,
    pub replay_sessions: usize,
}

enum Input {
    Packet(RawPacket),
    Inject(RawPacket, oneshot::Sender<Ingested>),
    SourceDone,
    Shutdown,
}

struct Live {
    state: NetworkState,
    store: CheckpointStore,
    last_t: EpochMillis,
}

struct AppState {
    specs: Arc<Specs>,
    live: RwLock<Live>,
    events: broadcast::Sender<LiveEvent>,
    inputs: mpsc::Sender<Input>,
    sessions: Mutex<HashMap<u64, Arc<Playback>>>,
    next_session: AtomicU64,
    event_buffer: usize,
    source: String,
    source_done: AtomicBool,
    closing: watch::Receiver<bool>,
}

impl AppState {
    fn session(&self, id: u64) -> Result<Arc<Playback>, ApiError> {
        self.sessions
            .lock()
            .expect("sessions lock")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no_such_session", format!("no replay session {id}")))
    }
}

/// A started service. Dropping it without [`RunningServer::shutdown`]
/// leaves the pending journal unsealed; it is picked up on the next start.
pub struct RunningServer {
    local_addr: SocketAddr,
    app: Arc<AppState>,
    cancel: Arc<AtomicBool>,
    closing: watch::Sender<bool>,
    server: tokio::task::JoinHandle<io::Result<()>>,
    pipeline: Option<thread::JoinHandle<()>>,
    source: Option<thread::JoinHandle<()>>,
}

impl fmt::Debug for RunningServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RunningServer").field("local_addr", &self.local_addr).finish_non_exhaustive()
    }
}

impl RunningServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Receives every live event from now on.
    pub fn subscribe(&self) -> broadcast::Receiver<LiveEvent> {
        self.app.events.subscribe()
    }

    pub fn status(&self) -> ServiceStatus {
        status_of(&self.app)
    }

    /// Stops the source, seals the pending logs into a final checkpoint and
    /// stops serving.
    pub async fn shutdown(mut self) -> Result<(), ServeError> {
        self.cancel.store(true, Ordering::Relaxed);
        let _ = self.app.inputs.send(Input::Shutdown).await;
        join_thread(self.pipeline.take()).await?;
        join_thread(self.source.take()).await?;
        let _ = self.closing.send(true);
        self.app.sessions.lock().expect("sessions lock").clear();
        match tokio::time::timeout(SHUTDOWN_GRACE, &mut self.server).await {
            Ok(Ok(Ok(()))) => Ok(()),
            Ok(Ok(Err(e))) => Err(ServeError::Join(e.to_string())),
            Ok(Err(e)) => Err(ServeError::Join(e.to_string())),
            Err(_) => {
                self.server.abort();
                Ok(())
            }
        }
    }
}

async fn join_thread(handle: Option<thread::JoinHandle<()>>) -> Result<(), ServeError> {
    let Some(handle) = handle else { return Ok(()) };
    tokio::task::spawn_blocking(move || handle.join())
        .await
        .map_err(|e| ServeError::Join(e.to_string()))?
        .map_err(|_| ServeError::Join("worker thread panicked".into()))
}

fn open_source(
    spec: &SourceSpec,
    specs: &Arc<Specs>,
    cancel: &Arc<AtomicBool>,
) -> Result<Option<Box<dyn PacketSource>>, ServeError> {
    let fail = |reason: String| ServeError::Source { source_spec: spec.to_string(), reason };
    Ok(match spec {
        SourceSpec::None => None,
        SourceSpec::File(path) => Some(Box::new(FileSource::open(path).map_err(|e| fail(e.to_string()))?)),
        SourceSpec::Tcp(addr) => {
            Some(Box::new(TcpSource::bind(addr, Arc::clone(cancel)).map_err(|e| fail(e.to_string()))?))
        }
        SourceSpec::Sim { config, pace } => {
            let start = now_millis();
            let config = SimConfig { start_ms: start, ..config.clone() };
            let sim = Simulator::new(&config, Arc::clone(specs)).map_err(|e| fail(e.to_string()))?;
            if *pace {
                Some(Box::new(Paced { inner: sim, cancel: Arc::clone(cancel) }))
            } else {
                Some(Box::new(sim))
            }
        }
    })
}

/// Holds each packet back until the wall clock reaches its timestamp.
struct Paced<S> {
    inner: S,
    cancel: Arc<AtomicBool>,
}

impl<S: PacketSource> PacketSource for Paced<S> {
    fn next_packet(&mut self) -> Option<RawPacket> {
        let packet = self.inner.next_packet()?;
        loop {
            if self.cancel.load(Ordering::Relaxed) {
                return None;
            }
            let now = now_millis();
            if now >= packet.received_at {
                return Some(packet);
            }
            thread::sleep(PACE_SLICE.min(Duration::from_millis(packet.received_at - now)));
        }
    }
}

/// Starts the service: loads specs, opens the store, rebuilds the state
/// from it, starts the source and binds the listener.
pub async fn serve(cfg: ServerConfig) -> Result<RunningServer, ServeError> {
    let specs = Arc::new(Specs::load(&cfg.net_path, &cfg.pkt_path)?);
    for warning in specs.network.warnings() {
        tracing::warn!("{warning}");
    }
    let store = CheckpointStore::open(&cfg.store_dir, Arc::clone(&specs))?;
    let history = store.history();
    let (state, last_t) = match history.last_time() {
        None => (NetworkState::new(), 0),
        Some(t) => (state_at(&history, t, &specs)?, history.logs().last().map_or(0, |l| l.t)),
    };
    let cancel = Arc::new(AtomicBool::new(false));
    let source = open_source(&cfg.source, &specs, &cancel)?;
    let listener = tokio::net::TcpListener::bind(cfg.listen)
        .await
        .map_err(|source| ServeError::Bind { addr: cfg.listen, source })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::Bind { addr: cfg.listen, source })?;

    let (inputs, input_rx) = mpsc::channel(INPUT_QUEUE);
    let (events, _) = broadcast::channel(cfg.event_buffer.max(1));
    let (closing_tx, closing) = watch::channel(false);
    let app = Arc::new(AppState {
        specs,
        live: RwLock::new(Live { state, store, last_t }),
        events,
        inputs: inputs.clone(),
        sessions: Mutex::new(HashMap::new()),
        next_session: AtomicU64::new(1),
        event_buffer: cfg.event_buffer.max(1),
        source: cfg.source.to_string(),
        source_done: AtomicBool::new(source.is_none()),
        closing,
    });

    let pipeline = {
        let app = Arc::clone(&app);
        thread::Builder::new()
            .name("nviz-pipeline".into())
            .spawn(move || run_pipeline(app, input_rx))
            .map_err(|e| ServeError::Join(e.to_string()))?
    };
    let source = match source {
        None => None,
        Some(mut src) => {
            let cancel = Arc::clone(&cancel);
            let handle = thread::Builder::new()
                .name("nviz-source".into())
                .spawn(move || {
                    while let Some(packet) = src.next_packet() {
                        if cancel.load(Ordering::Relaxed) || inputs.blocking_send(Input::Packet(packet)).is_err() {
                            return;
                        }
                    }
                    let _ = inputs.blocking_send(Input::SourceDone);
                })
                .map_err(|e| ServeError::Join(e.to_string()))?;
            Some(handle)
        }
    };

    let router = router(Arc::clone(&app));
    let mut stop = closing_tx.subscribe();
    let server = tokio::spawn(async move {
        axum::serve(listener, router)
            .with_graceful_shutdown(async move {
                let _ = stop.wait_for(|c| *c).await;
            })
            .await
    });
    tracing::info!(%local_addr, source = %cfg.source, "gateway listening");
    Ok(RunningServer { local_addr, app, cancel, closing: closing_tx, server, pipeline: Some(pipeline), source })
}

fn run_pipeline(app: Arc<AppState>, mut inputs: mpsc::Receiver<Input>) {
    while let Some(input) = inputs.blocking_recv() {
        match input {
            Input::Packet(raw) => {
                if ingest(&app, raw).is_none() {
                    return;
                }
            }
            Input::Inject(raw, reply) => match ingest(&app, raw) {
                Some(outcome) => {
                    let _ = reply.send(outcome);
                }
                None => return,
            },
            Input::SourceDone => {
                tracing::info!("packet source finished");
                app.source_done.store(true, Ordering::Relaxed);
            }
            Input::Shutdown => break,
        }
    }
    let mut live = app.live.write().expect("live lock");
    let Live { state, store, .. } = &mut *live;
    match store.seal_pending(state) {
        Ok(Some(cp)) => tracing::info!(t = cp.t, logs = cp.logs.len(), "sealed final checkpoint"),
        Ok(None) => {}
        Err(e) => tracing::error!(error = %e, "cannot seal final checkpoint"),
    }
}

/// Decodes, applies, records, then broadcasts one packet. `None` means the
/// store failed and the pipeline must stop.
fn ingest(app: &AppState, mut raw: RawPacket) -> Option<Ingested> {
    let mut live = app.live.write().expect("live lock");
    raw.received_at = raw.received_at.max(live.last_t);
    let t = raw.received_at;
    let packet = match decode_packet(&raw, &app.specs.network, &app.specs.packets) {
        Ok(p) => p,
        Err(e) => {
            live.state.discard_count += 1;
            drop(live);
            return Some(discard(app, &raw, e.to_string()));
        }
    };
    // apply_packet counts its own discards.
    let diff = match live.state.apply_packet(&packet) {
        Ok(d) => d,
        Err(e) => {
            drop(live);
            return Some(discard(app, &raw, e.to_string()));
        }
    };
    let checkpoint = {
        let Live { state, store, last_t } = &mut *live;
        match store.record(&raw, state) {
            Ok(cp) => {
                *last_t = t;
                cp.map(|c| c.meta())
            }
            Err(e) => {
                tracing::error!(error = %e, "store failed; ingest stopped");
                return None;
            }
        }
    };
    let view = PacketView {
        t,
        packet_id: packet.packet_id(),
        description: packet.format.description.clone(),
        fields: convert_fields(&packet, &live.state, &app.specs.network),
    };
    drop(live);
    let changes = diff.len();
    let _ = app.events.send(LiveEvent::Packet(view.clone()));
    let _ = app.events.send(LiveEvent::Diff { t, diff });
    if let Some(meta) = checkpoint {
        let _ = app.events.send(LiveEvent::Checkpoint(meta));
    }
    Some(Ingested::Applied { packet: view, changes, checkpoint })
}

fn discard(app: &AppState, raw: &RawPacket, reason: String) -> Ingested {
    tracing::debug!(t = raw.received_at, %reason, "packet discarded");
    let _ = app.events.send(LiveEvent::Discard {
        t: raw.received_at,
        p: format_hex_log(&raw.bytes),
        reason: reason.clone(),
    });
    Ingested::Discarded { t: raw.received_at, reason }
}

fn status_of(app: &AppState) -> ServiceStatus {
    let live = app.live.read().expect("live lock");
    let history = live.store.history();
    ServiceStatus {
        source: app.source.clone(),
        source_done: app.source_done.load(Ordering::Relaxed),
        packet_count: live.state.packet_count,
        discard_count: live.state.discard_count,
        checkpoints: history.checkpoints.len(),
        pending_logs: history.pending.len(),
        last_t: history.last_time(),
        replay_sessions: app.sessions.lock().expect("sessions lock").len(),
    }
}

fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/spec/network", get(spec_network))
        .route("/api/spec/packet", get(spec_packet))
        .route("/api/state", get(live_state))
        .route("/api/status", get(status))
        .route("/api/checkpoints", get(list_checkpoints))
        .route("/api/checkpoints/{t}", get(checkpoint_xml))
        .route("/api/simulate", post(simulate))
        .route("/api/replay/sessions", post(create_session))
        .route("/api/replay/{id}", get(session_state).delete(delete_session))
        .route("/api/replay/{id}/play", post(session_play))
        .route("/api/replay/{id}/pause", post(session_pause))
        .route("/api/replay/{id}/seek", post(session_seek))
        .route("/api/replay/{id}/step", post(session_step))
        .route("/ws/live", get(ws_live))
        .route("/ws/replay/{id}", get(ws_replay))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(app)
}

#[derive(Debug, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<ReplayError> for ApiError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::EmptyStore => ApiError::new(StatusCode::CONFLICT, "empty_store", e.to_string()),
            ReplayError::InvalidSpeed(_) => ApiError::bad_request("invalid_speed", e.to_string()),
            ReplayError::CorruptLog { .. } => {
                ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log", e.to_string())
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("bad_json", e.to_string()))
}

fn parse_param<T: FromStr>(name: &str, value: &str) -> ApiResult<T> {
    value.parse().map_err(|_| ApiError::bad_request("bad_parameter", format!("{name}={value:?} is not valid")))
}

fn xml(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/xml")], body).into_response()
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

async fn spec_network(State(app): State<Arc<AppState>>) -> Response {
    xml(app.specs.network_xml().to_string())
}

async fn spec_packet(State(app): State<Arc<AppState>>) -> Response {
    xml(app.specs.packet_xml().to_string())
}

async fn live_state(State(app): State<Arc<AppState>>) -> Json<ConvertedState> {
    let live = app.live.read().expect("live lock");
    Json(converted_view(&live.state, &app.specs.network))
}

async fn status(State(app): State<Arc<AppState>>) -> Json<ServiceStatus> {
    Json(status_of(&app))
}

async fn list_checkpoints(
    State(app): State<Arc<AppState>>,
    Query(query): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<CheckpointMeta>>> {
    let from = query.get("from").map(|v| parse_param("from", v)).transpose()?.unwrap_or(0);
    let to = query.get("to").map(|v| parse_param("to", v)).transpose()?.unwrap_or(EpochMillis::MAX);
    let live = app.live.read().expect("live lock");
    Ok(Json(live.store.list_checkpoints(from, to)))
}

async fn checkpoint_xml(State(app): State<Arc<AppState>>, Path(t): Path<String>) -> ApiResult<Response> {
    let t: EpochMillis = parse_param("t", &t)?;
    let live = app.live.read().expect("live lock");
    match live.store.checkpoint_xml(t) {
        Ok(text) => Ok(xml(text)),
        Err(e @ StoreError::NotFound(_)) => {
            Err(ApiError::new(StatusCode::NOT_FOUND, "no_such_checkpoint", e.to_string()))
        }
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "store_error", e.to_string())),
    }
}

async fn simulate(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<Ingested>> {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("bad_hex", "body is not UTF-8"))?;
    let bytes = parse_hex_log(text.trim()).map_err(|e| ApiError::bad_request("bad_hex", e.to_string()))?;
    let (reply, outcome) = oneshot::channel();
    let unavailable =
        || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "pipeline_stopped", "the ingest pipeline is not running");
    app.inputs.send(Input::Inject(RawPacket::new(bytes, now_millis()), reply)).await.map_err(|_| unavailable())?;
    match outcome.await.map_err(|_| unavailable())? {
        Ingested::Discarded { reason, .. } => Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "discarded", reason)),
        applied => Ok(Json(applied)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AtBody {
    at: EpochMillis,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpeedBody {
    speed: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepBody {
    dir: Direction,
}

#[derive(Debug, Serialize)]
struct SessionCreated {
    id: u64,
    seek: SeekOutcome,
    status: PlaybackStatus,
}

#[derive(Debug, Serialize)]
struct SessionView {
    id: u64,
    status: PlaybackStatus,
    state: NetworkState,
    converted: ConvertedState,
}

#[derive(Debug, Serialize)]
struct SeekView {
    seek: SeekOutcome,
    status: PlaybackStatus,
}

#[derive(Debug, Serialize)]
struct StepView {
    diff: StateDiff,
    status: PlaybackStatus,
}

fn session_id(id: &str) -> ApiResult<u64> {
    parse_param("id", id)
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Json<SessionCreated>> {
    let AtBody { at } = json_body(&body)?;
    let history = app.live.read().expect("live lock").store.history();
    let (session, seek) = ReplaySession::new(history, Arc::clone(&app.specs), at)?;
    let playback = Arc::new(Playback::new(session, app.event_buffer));
    let id = app.next_session.fetch_add(1, Ordering::Relaxed);
    let status = playback.status();
    app.sessions.lock().expect("sessions lock").insert(id, playback);
    Ok(Json(SessionCreated { id, seek, status }))
}

async fn session_state(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let id = session_id(&id)?;
    let playback = app.session(id)?;
    let state = playback.with_session(|s| s.state().clone());
    let converted = converted_view(&state, &app.specs.network);
    Ok(Json(SessionView { id, status: playback.status(), state, converted }))
}

async fn delete_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let id = session_id(&id)?;
    match app.sessions.lock().expect("sessions lock").remove(&id) {
        Some(playback) => {
            playback.pause();
            Ok(StatusCode::NO_CONTENT)
        }
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "no_such_session", format!("no replay session {id}"))),
    }
}

async fn session_play(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<PlaybackStatus>> {
    let playback = app.session(session_id(&id)?)?;
    let SpeedBody { speed } = json_body(&body)?;
    playback.play(speed)?;
    Ok(Json(playback.status()))
}

async fn session_pause(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<PlaybackStatus>> {
    let playback = app.session(session_id(&id)?)?;
    playback.pause();
    Ok(Json(playback.status()))
}

async fn session_seek(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SeekView>> {
    let playback = app.session(session_id(&id)?)?;
    let AtBody { at } = json_body(&body)?;
    let history = app.live.read().expect("live lock").store.history();
    let seek = playback.seek(at, Some(history))?;
    Ok(Json(SeekView { seek, status: playback.status() }))
}

async fn session_step(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<StepView>> {
    let playback = app.session(session_id(&id)?)?;
    let StepBody { dir } = json_body(&body)?;
    let diff = playback.step(dir)?;
    Ok(Json(StepView { diff, status: playback.status() }))
}

async fn ws_live(ws: WebSocketUpgrade, State(app): State<Arc<AppState>>) -> Response {
    let events = app.events.subscribe();
    let closing = app.closing.clone();
    ws.on_upgrade(move |socket| forward_events(socket, events, closing))
}

async fn ws_replay(
    ws: WebSocketUpgrade,
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Response> {
    let playback = app.session(session_id(&id)?)?;
    let events = playback.subscribe();
    let closing = app.closing.clone();
    Ok(ws.on_upgrade(move |socket| forward_events(socket, events, closing)))
}

/// Relays events as JSON text frames. A subscriber that falls more than the
/// buffer behind is disconnected rather than slowing the producer.
async fn forward_events<E: Serialize + Clone>(
    mut socket: WebSocket,
    mut events: broadcast::Receiver<E>,
    mut closing: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => return,
                Some(Ok(_)) => {}
            },
            event = events.recv() => match event {
                Ok(event) => {
                    let text = serde_json::to_string(&event).expect("events serialize");
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(missed)) => {
                    tracing::warn!(missed, "disconnecting slow subscriber");
                    let _ = socket.send(Message::Close(Some(axum::extract::ws::CloseFrame {
                        code: axum::extract::ws::close_code::POLICY,
                        reason: "subscriber fell behind".into(),
                    }))).await;
                    return;
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            _ = closing.changed() => {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
        }
    }
}
