//! Reconstruct past states, step backwards and forwards, and play a history
//! back at high speed.

use std::sync::Arc;

use nviz::checkpoint::CheckpointStore;
use nviz::ingest::{record_source, PacketSource, SimConfig, Simulator};
use nviz::replay::{state_at, Direction, Playback, ReplayEvent, ReplaySession};
use nviz::spec::Specs;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs =
        Arc::new(Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml"))?);
    let dir = tempfile::tempdir()?;
    let mut store = CheckpointStore::open(dir.path(), Arc::clone(&specs))?;
    let cfg = SimConfig { seed: 7, rate: 5.0, count: 300, start_ms: 1_000_000, ..SimConfig::default() };
    record_source(&mut Simulator::new(&cfg, Arc::clone(&specs))? as &mut dyn PacketSource, &mut store, true)?;
    let history = store.history();

    for tau in [1_000_000, 1_020_000, 1_059_800] {
        let state = state_at(&history, tau, &specs)?;
        println!("t={tau}: {} nodes, {} links", state.nodes.len(), state.link_count());
    }

    let (mut session, seek) = ReplaySession::new(history.clone(), Arc::clone(&specs), 1_030_000)?;
    println!("session at {} (clamped: {})", seek.cursor, seek.clamped);
    let back = session.step(Direction::Backward)?;
    println!("stepped back to {}: {} change(s)", session.cursor(), back.len());
    let fwd = session.step(Direction::Forward)?;
    println!("stepped forward to {}: {} change(s)", session.cursor(), fwd.len());
    let clamped = session.seek(0)?;
    println!("seek(0) clamped to {}", clamped.cursor);

    let playback = Playback::new(session, 4096);
    let mut events = playback.subscribe();
    playback.play(1000.0)?;
    let mut diffs = 0;
    loop {
        match events.recv().await? {
            ReplayEvent::Diff { .. } => diffs += 1,
            ReplayEvent::Ended { t } => {
                println!("played {diffs} steps at 1000x, ended at {t}");
                break;
            }
            ReplayEvent::FullState { .. } => {}
        }
    }
    Ok(())
}
