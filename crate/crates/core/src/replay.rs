//! Historical state reconstruction and interactive playback.
//!
//! `state_at(τ)` starts from the latest checkpoint sealed at or before `τ`
//! and applies every later log with `t <= τ`. Logs with identical
//! timestamps are applied together, in stored order.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::checkpoint::{History, LogEntry};
use crate::codec::{decode_packet, EpochMillis};
use crate::model::{NetworkState, StateDiff};
use crate::spec::Specs;

/// Playback speed multiplier ceiling.
pub const MAX_SPEED: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReplayError {
    #[error("the store holds no checkpoints or logs")]
    EmptyStore,
    #[error("log at t={t} cannot be replayed: {reason}")]
    CorruptLog { t: EpochMillis, reason: String },
    #[error("speed must be a positive number, got {0}")]
    InvalidSpeed(f64),
}

fn apply_log(state: &mut NetworkState, log: &LogEntry, specs: &Specs) -> Result<StateDiff, ReplayError> {
    let packet = decode_packet(&log.to_raw(), &specs.network, &specs.packets)
        .map_err(|e| ReplayError::CorruptLog { t: log.t, reason: e.to_string() })?;
    state.apply_packet(&packet).map_err(|e| ReplayError::CorruptLog { t: log.t, reason: e.to_string() })
}

/// Network state as of time `tau`, inclusive of logs stamped exactly `tau`.
pub fn state_at(history: &History, tau: EpochMillis, specs: &Specs) -> Result<NetworkState, ReplayError> {
    if history.is_empty() {
        return Err(ReplayError::EmptyStore);
    }
    let base = history.checkpoints.partition_point(|c| c.t <= tau);
    let mut state = match base {
        0 => NetworkState::new(),
        k => history.checkpoints[k - 1].state.clone(),
    };
    let later = history.checkpoints[base..].iter().flat_map(|c| c.logs.iter()).chain(history.pending.iter());
    for log in later {
        if log.t > tau {
            break;
        }
        apply_log(&mut state, log, specs)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PlayMode {
    Paused,
    Playing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeekOutcome {
    pub requested: EpochMillis,
    pub cursor: EpochMillis,
    pub clamped: bool,
}

/// A private replay cursor over a fixed history snapshot.
#[derive(Debug, Clone)]
pub struct ReplaySession {
    history: History,
    specs: Arc<Specs>,
    /// Flattened log timeline: (checkpoint index or `checkpoints.len()` for
    /// pending, log index).
    timeline: Vec<(usize, usize)>,
    times: Vec<EpochMillis>,
    /// Number of timeline entries folded into `state`.
    position: usize,
    cursor: EpochMillis,
    state: NetworkState,
}

impl ReplaySession {
    pub fn new(history: History, specs: Arc<Specs>, at: EpochMillis) -> Result<(Self, SeekOutcome), ReplayError> {
        if history.is_empty() {
            return Err(ReplayError::EmptyStore);
        }
        let mut session = ReplaySession {
            history: History::default(),
            specs,
            timeline: Vec::new(),
            times: Vec::new(),
            position: 0,
            cursor: 0,
            state: NetworkState::new(),
        };
        session.install(history);
        let outcome = session.seek(at)?;
        Ok((session, outcome))
    }

    fn install(&mut self, history: History) {
        self.timeline.clear();
        self.times.clear();
        for (ci, cp) in history.checkpoints.iter().enumerate() {
            for (li, log) in cp.logs.iter().enumerate() {
                self.timeline.push((ci, li));
                self.times.push(log.t);
            }
        }
        let pending_idx = history.checkpoints.len();
        for (li, log) in history.pending.iter().enumerate() {
            self.timeline.push((pending_idx, li));
            self.times.push(log.t);
        }
        self.history = history;
    }

    fn log(&self, i: usize) -> &LogEntry {
        let (ci, li) = self.timeline[i];
        match self.history.checkpoints.get(ci) {
            Some(cp) => &cp.logs[li],
            None => &self.history.pending[li],
        }
    }

    /// Replaces the history snapshot (e.g. after more data was recorded),
    /// keeping the cursor.
    pub fn refresh(&mut self, history: History) -> Result<SeekOutcome, ReplayError> {
        if history.is_empty() {
            return Err(ReplayError::EmptyStore);
        }
        self.install(history);
        self.seek(self.cursor)
    }

    /// Cursor range: first log time to the later of the last checkpoint
    /// and the last pending log.
    pub fn range(&self) -> (EpochMillis, EpochMillis) {
        let last = self.history.last_time().unwrap_or(0);
        let first = self.history.first_log_time().unwrap_or(last).min(last);
        (first, last)
    }

    pub fn cursor(&self) -> EpochMillis {
        self.cursor
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn specs(&self) -> &Arc<Specs> {
        &self.specs
    }

    /// Time of the next log that a forward step would apply.
    pub fn next_log_time(&self) -> Option<EpochMillis> {
        self.times.get(self.position).copied()
    }

    pub fn seek(&mut self, tau: EpochMillis) -> Result<SeekOutcome, ReplayError> {
        let (lo, hi) = self.range();
        let cursor = tau.clamp(lo, hi);
        self.state = state_at(&self.history, cursor, &self.specs)?;
        self.position = self.times.partition_point(|&t| t <= cursor);
        self.cursor = cursor;
        Ok(SeekOutcome { requested: tau, cursor, clamped: cursor != tau })
    }

    /// Moves to the next or previous log time. At either end of the stream
    /// this is a no-op returning an empty diff.
    pub fn step(&mut self, direction: Direction) -> Result<StateDiff, ReplayError> {
        match direction {
            Direction::Forward => {
                let Some(&t) = self.times.get(self.position) else {
                    return Ok(StateDiff::default());
                };
                let mut diff = StateDiff::default();
                while self.times.get(self.position) == Some(&t) {
                    let log = self.log(self.position).clone();
                    diff.extend(apply_log(&mut self.state, &log, &self.specs)?);
                    self.position += 1;
                }
                self.cursor = t;
                Ok(diff)
            }
            Direction::Backward => {
                if self.position == 0 {
                    return Ok(StateDiff::default());
                }
                let last = self.times[self.position - 1];
                let group_start = self.times.partition_point(|&t| t < last);
                if group_start == 0 {
                    return Ok(StateDiff::default());
                }
                let target = self.times[group_start - 1];
                // Logs are not invertible: rebuild from the nearest checkpoint.
                let rebuilt = state_at(&self.history, target, &self.specs)?;
                let diff = StateDiff::between(&self.state, &rebuilt);
                self.state = rebuilt;
                self.position = group_start;
                self.cursor = target;
                Ok(diff)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ReplayEvent {
    Diff {
        t: EpochMillis,
        diff: StateDiff,
    },
    FullState {
        t: EpochMillis,
        clamped: bool,
        state: NetworkState,
    },
    /// Playback reached the end of the history and paused.
    Ended {
        t: EpochMillis,
    },
}

#[derive(Debug)]
struct Shared {
    session: ReplaySession,
    mode: PlayMode,
    speed: f64,
}

/// A replay session with a playback clock. Events go out in order on a
/// broadcast channel.
#[derive(Debug)]
pub struct Playback {
    shared: Arc<Mutex<Shared>>,
    events: broadcast::Sender<ReplayEvent>,
    task: Mutex<Option<JoinHandle<()>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlaybackStatus {
    pub cursor: EpochMillis,
    pub mode: PlayMode,
    pub speed: f64,
    pub range: (EpochMillis, EpochMillis),
}

impl Playback {
    pub fn new(session: ReplaySession, buffer: usize) -> Self {
        let (events, _) = broadcast::channel(buffer.max(1));
        Playback {
            shared: Arc::new(Mutex::new(Shared { session, mode: PlayMode::Paused, speed: 1.0 })),
            events,
            task: Mutex::new(None),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ReplayEvent> {
        self.events.subscribe()
    }

    pub fn status(&self) -> PlaybackStatus {
        let shared = self.shared.lock().expect("replay lock");
        PlaybackStatus {
            cursor: shared.session.cursor(),
            mode: shared.mode,
            speed: shared.speed,
            range: shared.session.range(),
        }
    }

    /// Runs `f` against the session under its lock.
    pub fn with_session<R>(&self, f: impl FnOnce(&ReplaySession) -> R) -> R {
        f(&self.shared.lock().expect("replay lock").session)
    }

    fn stop_clock(&self) {
        if let Some(task) = self.task.lock().expect("task lock").take() {
            task.abort();
        }
    }

    /// Starts (or re-paces) playback. Must be called within a Tokio runtime.
    pub fn play(&self, speed: f64) -> Result<(), ReplayError> {
        if speed.is_nan() || speed <= 0.0 {
            return Err(ReplayError::InvalidSpeed(speed));
        }
        let speed = speed.min(MAX_SPEED);
        self.stop_clock();
        let start_t = {
            let mut shared = self.shared.lock().expect("replay lock");
            shared.mode = PlayMode::Playing;
            shared.speed = speed;
            shared.session.cursor()
        };
        let shared = Arc::clone(&self.shared);
        let events = self.events.clone();
        let handle = tokio::spawn(async move {
            let started = Instant::now();
            loop {
                let next = shared.lock().expect("replay lock").session.next_log_time();
                let Some(next) = next else {
                    let mut s = shared.lock().expect("replay lock");
                    s.mode = PlayMode::Paused;
                    let _ = events.send(ReplayEvent::Ended { t: s.session.cursor() });
                    return;
                };
                let offset = next.saturating_sub(start_t) as f64 / 1000.0 / speed;
                tokio::time::sleep_until(started + Duration::from_secs_f64(offset)).await;
                let mut s = shared.lock().expect("replay lock");
                match s.session.step(Direction::Forward) {
                    Ok(diff) => {
                        let _ = events.send(ReplayEvent::Diff { t: s.session.cursor(), diff });
                    }
                    Err(e) => {
                        tracing::error!(error = %e, "replay stopped");
                        s.mode = PlayMode::Paused;
                        return;
                    }
                }
            }
        });
        *self.task.lock().expect("task lock") = Some(handle);
        Ok(())
    }

    pub fn pause(&self) {
        self.stop_clock();
        self.shared.lock().expect("replay lock").mode = PlayMode::Paused;
    }

    /// Repositions and emits a full-state event; playback resumes from the
    /// new cursor if it was running.
    pub fn seek(&self, tau: EpochMillis, refreshed: Option<History>) -> Result<SeekOutcome, ReplayError> {
        self.stop_clock();
        let (outcome, resume) = {
            let mut shared = self.shared.lock().expect("replay lock");
            if let Some(history) = refreshed {
                shared.session.refresh(history)?;
            }
            let outcome = shared.session.seek(tau)?;
            let _ = self.events.send(ReplayEvent::FullState {
                t: outcome.cursor,
                clamped: outcome.clamped,
                state: shared.session.state().clone(),
            });
            let resume = (shared.mode == PlayMode::Playing).then_some(shared.speed);
            (outcome, resume)
        };
        if let Some(speed) = resume {
            self.play(speed)?;
        }
        Ok(outcome)
    }

    /// Pauses, then steps once and emits the diff.
    pub fn step(&self, direction: Direction) -> Result<StateDiff, ReplayError> {
        self.pause();
        let mut shared = self.shared.lock().expect("replay lock");
        let diff = shared.session.step(direction)?;
        let _ = self.events.send(ReplayEvent::Diff { t: shared.session.cursor(), diff: diff.clone() });
        Ok(diff)
    }
}

impl Drop for Playback {
    fn drop(&mut self) {
        self.stop_clock();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Checkpoint;
    use crate::codec::RawPacket;

    fn specs() -> Arc<Specs> {
        Arc::new(
            Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml")).unwrap(),
        )
    }

    fn env_log(t: u64, channel: u8) -> LogEntry {
        LogEntry { t, bytes: vec![0, 4, channel, 0, 1] }
    }

    fn temp_log(t: u64, addr: u8, temp: u8) -> LogEntry {
        LogEntry { t, bytes: vec![0, 2, 0, addr, 1, 0x6F, 0, temp] }
    }

    /// Two checkpoints of two logs each plus one pending log.
    fn history(specs: &Specs) -> History {
        let logs = [temp_log(10, 1, 50), env_log(20, 3), temp_log(30, 2, 60), temp_log(40, 1, 70), env_log(50, 5)];
        let mut state = NetworkState::new();
        let mut checkpoints = Vec::new();
        for chunk in logs[..4].chunks(2) {
            for log in chunk {
                apply_log(&mut state, log, specs).unwrap();
            }
            checkpoints.push(Arc::new(Checkpoint { t: chunk[1].t, state: state.clone(), logs: chunk.to_vec() }));
        }
        History { checkpoints, pending: Arc::new(vec![logs[4].clone()]) }
    }

    fn fold(logs: &[LogEntry], tau: u64, specs: &Specs) -> NetworkState {
        let mut state = NetworkState::new();
        for log in logs.iter().filter(|l| l.t <= tau) {
            let p = decode_packet(&RawPacket::new(log.bytes.clone(), log.t), &specs.network, &specs.packets).unwrap();
            state.apply_packet(&p).unwrap();
        }
        state
    }

    #[test]
    fn state_at_matches_fold_everywhere() {
        let specs = specs();
        let h = history(&specs);
        let all: Vec<_> = h.logs().cloned().collect();
        for tau in 0..60 {
            let got = state_at(&h, tau, &specs).unwrap();
            assert!(got.same_values(&fold(&all, tau, &specs)), "tau={tau}");
        }
        assert!(state_at(&h, 0, &specs).unwrap().nodes.is_empty());
        assert_eq!(state_at(&h, 20, &specs).unwrap(), h.checkpoints[0].state);
    }

    #[test]
    fn empty_store() {
        assert_eq!(state_at(&History::default(), 5, &specs()), Err(ReplayError::EmptyStore));
        assert!(matches!(ReplaySession::new(History::default(), specs(), 0), Err(ReplayError::EmptyStore)));
    }

    #[test]
    fn ties_straddling_a_checkpoint() {
        let specs = specs();
        // The checkpoint is sealed between two logs stamped 10.
        let mut state = NetworkState::new();
        apply_log(&mut state, &env_log(10, 1), &specs).unwrap();
        let cp = Arc::new(Checkpoint { t: 10, state, logs: vec![env_log(10, 1)] });
        let h = History { checkpoints: vec![cp], pending: Arc::new(vec![env_log(10, 2), env_log(11, 3)]) };
        assert_eq!(state_at(&h, 10, &specs).unwrap().env.raw_props[&1], 2);
        assert_eq!(state_at(&h, 11, &specs).unwrap().env.raw_props[&1], 3);
    }

    #[test]
    fn stepping() {
        let specs = specs();
        let h = history(&specs);
        let (mut s, outcome) = ReplaySession::new(h.clone(), Arc::clone(&specs), 25).unwrap();
        assert!(!outcome.clamped);
        let start = s.state().clone();

        let fwd = s.step(Direction::Forward).unwrap();
        assert!(!fwd.is_empty());
        assert_eq!(s.cursor(), 30);
        assert!(s.state().same_values(&state_at(&h, 30, &specs).unwrap()));

        let back = s.step(Direction::Backward).unwrap();
        assert!(!back.is_empty());
        assert_eq!(s.cursor(), 20);
        assert!(s.state().same_values(&start));

        // Back to the first log, then no further.
        s.step(Direction::Backward).unwrap();
        assert_eq!(s.cursor(), 10);
        assert!(s.step(Direction::Backward).unwrap().is_empty());
        assert_eq!(s.cursor(), 10);

        for _ in 0..4 {
            s.step(Direction::Forward).unwrap();
        }
        assert_eq!(s.cursor(), 50);
        assert!(s.step(Direction::Forward).unwrap().is_empty());
        assert_eq!(s.cursor(), 50);
    }

    #[test]
    fn seek_clamps_to_range() {
        let specs = specs();
        let (mut s, outcome) = ReplaySession::new(history(&specs), specs, 0).unwrap();
        assert_eq!(outcome, SeekOutcome { requested: 0, cursor: 10, clamped: true });
        let late = s.seek(1_000).unwrap();
        assert_eq!(late.cursor, 50);
        assert!(late.clamped);
        assert_eq!(s.state().env.raw_props[&1], 5);
    }

    #[test]
    fn forward_diffs_are_sound() {
        let specs = specs();
        let (mut s, _) = ReplaySession::new(history(&specs), specs, 10).unwrap();
        loop {
            let mut expected = s.state().clone();
            let diff = s.step(Direction::Forward).unwrap();
            if diff.is_empty() {
                break;
            }
            expected.apply_diff(&diff);
            assert_eq!(expected.nodes, s.state().nodes);
        }
    }

    #[tokio::test]
    async fn seek_then_pause_ends_with_full_state() {
        let specs = specs();
        let h = history(&specs);
        let (s, _) = ReplaySession::new(h.clone(), Arc::clone(&specs), 10).unwrap();
        let playback = Playback::new(s, 64);
        let mut rx = playback.subscribe();
        playback.seek(35, None).unwrap();
        playback.pause();
        let mut last = None;
        while let Ok(ev) = rx.try_recv() {
            last = Some(ev);
        }
        match last {
            Some(ReplayEvent::FullState { t: 35, state, clamped: false }) => {
                assert!(state.same_values(&state_at(&h, 35, &specs).unwrap()))
            }
            other => panic!("unexpected last event {other:?}"),
        }
    }

    #[tokio::test]
    async fn unbounded_speed_drains_to_the_end() {
        let specs = specs();
        let (s, _) = ReplaySession::new(history(&specs), specs, 10).unwrap();
        let playback = Playback::new(s, 64);
        let mut rx = playback.subscribe();
        assert_eq!(playback.play(0.0), Err(ReplayError::InvalidSpeed(0.0)));
        playback.play(f64::INFINITY).unwrap();
        let mut times = Vec::new();
        loop {
            match tokio::time::timeout(Duration::from_secs(5), rx.recv()).await.unwrap().unwrap() {
                ReplayEvent::Diff { t, .. } => times.push(t),
                ReplayEvent::Ended { t } => {
                    assert_eq!(t, 50);
                    break;
                }
                ReplayEvent::FullState { .. } => panic!("no seek issued"),
            }
        }
        assert_eq!(times, [20, 30, 40, 50]);
        assert_eq!(playback.status().mode, PlayMode::Paused);
        assert_eq!(playback.status().speed, MAX_SPEED);
    }
}
