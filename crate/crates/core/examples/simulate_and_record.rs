//! Generate a deterministic packet stream, record it into a checkpoint
//! store, and reopen the store.

use std::sync::Arc;

use nviz::checkpoint::CheckpointStore;
use nviz::ingest::{record_source, PacketSource, SimConfig, Simulator};
use nviz::spec::Specs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs =
        Arc::new(Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml"))?);
    let dir = tempfile::tempdir()?;

    let cfg = SimConfig { seed: 42, rate: 10.0, count: 1050, start_ms: 1_328_163_457_311, ..SimConfig::default() };
    let mut store = CheckpointStore::open(dir.path(), Arc::clone(&specs))?;
    let mut sim = Simulator::new(&cfg, Arc::clone(&specs))?;
    let summary = record_source(&mut sim as &mut dyn PacketSource, &mut store, false)?;
    println!(
        "applied {} packets, {} checkpoints sealed, {} logs pending",
        summary.applied,
        summary.sealed.len(),
        store.pending().len()
    );
    for meta in &summary.sealed {
        println!("  cp t={} nodes={} logs={}", meta.t, meta.nodes, meta.logs);
    }

    drop(store);
    let reopened = CheckpointStore::open_existing(dir.path())?;
    let history = reopened.history();
    println!(
        "reopened: {} checkpoints, {} pending logs recovered from the journal",
        history.checkpoints.len(),
        history.pending.len()
    );

    let mut files: Vec<_> =
        std::fs::read_dir(dir.path())?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    files.sort();
    println!("store files: {files:?}");
    Ok(())
}
