//! Checkpoints and the datalogger store.
//!
//! A checkpoint is the network state at time `t` plus the packet logs
//! recorded since the previous checkpoint. Applying a checkpoint's logs to
//! its predecessor's state reproduces its own state.
//!
//! Store layout:
//!
//! ```text
//! <dir>/network.xml       copy of the network spec the store was written with
//! <dir>/packets.xml       copy of the packet spec
//! <dir>/cp_<t>.xml        one sealed checkpoint per file, immutable once written
//! <dir>/pending.log       packet-log journal of logs not yet sealed
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use roxmltree::Node;
use thiserror::Error;

use crate::codec::{decode_packet, format_hex_log, parse_hex_log, EpochMillis, RawPacket};
use crate::ingest::{format_log_line, parse_log_line};
use crate::model::{Address, LinkState, NetworkState, NodeState, PropertyId};
use crate::spec::xml::{check_attributes, describe, element_children, expect_name, parse_document, required_attr};
use crate::spec::{PropertyKind, SpecError, Specs};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub t: EpochMillis,
    pub bytes: Vec<u8>,
}

impl LogEntry {
    pub fn to_raw(&self) -> RawPacket {
        RawPacket::new(self.bytes.clone(), self.t)
    }
}

impl From<&RawPacket> for LogEntry {
    fn from(raw: &RawPacket) -> Self {
        LogEntry { t: raw.received_at, bytes: raw.bytes.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Checkpoint {
    pub t: EpochMillis,
    pub state: NetworkState,
    pub logs: Vec<LogEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CheckpointMeta {
    pub t: EpochMillis,
    pub nodes: usize,
    pub logs: usize,
}

impl Checkpoint {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta { t: self.t, nodes: self.state.nodes.len(), logs: self.logs.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Xml(#[from] SpecError),
    #[error("{location}: unknown attribute {attr} (no {kind} property {id})")]
    UnknownProperty { location: String, attr: String, kind: PropertyKind, id: u64 },
    #[error("{location}: {attr}={value:?} is not a non-negative integral number")]
    BadValue { location: String, attr: String, value: String },
    #[error("{location}: log does not decode: {reason}")]
    BadLog { location: String, reason: String },
    #[error("{location}: log time {log_t} breaks ordering (previous {prev_t}, checkpoint {checkpoint_t})")]
    LogOrder { location: String, log_t: EpochMillis, prev_t: EpochMillis, checkpoint_t: EpochMillis },
    #[error("{location}: duplicate {what}")]
    Duplicate { location: String, what: String },
}

fn write_attrs(out: &mut String, props: &std::collections::BTreeMap<PropertyId, u64>) {
    for (id, v) in props {
        let _ = write!(out, " att{id}=\"{v}.0\"");
    }
}

/// Writes a checkpoint in the checkpoint XML dialect.
///
/// Attribute order is fixed (`addr` first, then `attK` by ascending `K`;
/// `Link` puts `dest` last; `L` is `p` then `t`) and raw values carry a
/// trailing `.0`.
pub fn serialize_checkpoint(cp: &Checkpoint) -> String {
    let mut body = String::new();
    for node in cp.state.nodes.values() {
        let _ = write!(body, "  <Node addr=\"{}\"", node.address);
        write_attrs(&mut body, &node.raw_props);
        if node.links.is_empty() {
            body.push_str("/>\n");
            continue;
        }
        body.push_str(">\n");
        for link in node.links.values() {
            body.push_str("    <Link");
            write_attrs(&mut body, &link.raw_props);
            let _ = writeln!(body, " dest=\"{}\"/>", link.dest);
        }
        body.push_str("  </Node>\n");
    }
    if !cp.state.env.raw_props.is_empty() {
        body.push_str("  <Envr");
        write_attrs(&mut body, &cp.state.env.raw_props);
        body.push_str("/>\n");
    }
    for log in &cp.logs {
        let _ = writeln!(body, "  <L p=\"{}\" t=\"{}\"/>", format_hex_log(&log.bytes), log.t);
    }
    if body.is_empty() {
        format!("<Checkpoint t=\"{}\"/>\n", cp.t)
    } else {
        format!("<Checkpoint t=\"{}\">\n{body}</Checkpoint>\n", cp.t)
    }
}

fn parse_time(node: Node<'_, '_>, attr: &str) -> Result<u64, CheckpointError> {
    Ok(crate::spec::xml::uint_attr(node, attr)?)
}

/// Accepts `"378"`, `"378.0"`, `"378.00"`; rejects fractions and negatives.
fn parse_raw_value(node: Node<'_, '_>, attr: &str, value: &str) -> Result<u64, CheckpointError> {
    let bad =
        || CheckpointError::BadValue { location: describe(node), attr: attr.to_string(), value: value.to_string() };
    let (int, frac) = value.split_once('.').unwrap_or((value, ""));
    if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b == b'0') {
        return Err(bad());
    }
    int.parse().map_err(|_| bad())
}

fn parse_props(
    node: Node<'_, '_>,
    kind: PropertyKind,
    specs: &Specs,
    reserved: &[&str],
) -> Result<BTreeMap<PropertyId, u64>, CheckpointError> {
    let mut props = BTreeMap::new();
    for attr in node.attributes() {
        if reserved.contains(&attr.name()) {
            continue;
        }
        let id = attr
            .name()
            .strip_prefix("att")
            .filter(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| SpecError::Schema {
                location: describe(node),
                message: format!("unknown attribute {:?}", attr.name()),
            })?;
        let property = u32::try_from(id).ok().and_then(|id| specs.network.lookup(kind, id)).ok_or_else(|| {
            CheckpointError::UnknownProperty { location: describe(node), attr: attr.name().to_string(), kind, id }
        })?;
        props.insert(property.id, parse_raw_value(node, attr.name(), attr.value())?);
    }
    Ok(props)
}

pub fn parse_checkpoint(xml_text: &str, specs: &Specs) -> Result<Checkpoint, CheckpointError> {
    let doc = parse_document(xml_text)?;
    let root = doc.root_element();
    expect_name(root, "Checkpoint")?;
    check_attributes(root, &["t"])?;
    let t = parse_time(root, "t")?;

    let mut state = NetworkState::new();
    let mut logs: Vec<LogEntry> = Vec::new();
    let mut seen_env = false;
    for child in element_children(root)? {
        match child.tag_name().name() {
            "Node" if child.tag_name().namespace().is_none() => {
                let addr: Address = parse_raw_value(child, "addr", required_attr(child, "addr")?)?;
                let raw_props = parse_props(child, PropertyKind::Node, specs, &["addr"])?;
                let mut links = BTreeMap::new();
                for link_node in element_children(child)? {
                    expect_name(link_node, "Link")?;
                    let dest: Address = parse_raw_value(link_node, "dest", required_attr(link_node, "dest")?)?;
                    let raw_props = parse_props(link_node, PropertyKind::Link, specs, &["dest"])?;
                    if links.insert(dest, LinkState { dest, raw_props, last_seen: None }).is_some() {
                        return Err(CheckpointError::Duplicate {
                            location: describe(link_node),
                            what: format!("link {addr}->{dest}"),
                        });
                    }
                }
                let node = NodeState { address: addr, raw_props, links, last_seen: None };
                if state.nodes.insert(addr, node).is_some() {
                    return Err(CheckpointError::Duplicate { location: describe(child), what: format!("node {addr}") });
                }
            }
            "Envr" if child.tag_name().namespace().is_none() => {
                if std::mem::replace(&mut seen_env, true) {
                    return Err(CheckpointError::Duplicate { location: describe(child), what: "Envr".into() });
                }
                element_children(child)?.first().map_or(Ok(()), |c| {
                    Err(SpecError::Schema { location: describe(*c), message: "unexpected element".into() })
                })?;
                state.env.raw_props = parse_props(child, PropertyKind::Envr, specs, &[])?;
            }
            "L" if child.tag_name().namespace().is_none() => {
                check_attributes(child, &["p", "t"])?;
                if let Some(c) = element_children(child)?.first() {
                    return Err(
                        SpecError::Schema { location: describe(*c), message: "unexpected element".into() }.into()
                    );
                }
                let log_t = parse_time(child, "t")?;
                let bytes = parse_hex_log(required_attr(child, "p")?)
                    .map_err(|e| CheckpointError::BadLog { location: describe(child), reason: e.to_string() })?;
                decode_packet(&RawPacket::new(bytes.clone(), log_t), &specs.network, &specs.packets)
                    .map_err(|e| CheckpointError::BadLog { location: describe(child), reason: e.to_string() })?;
                let prev_t = logs.last().map_or(0, |l| l.t);
                if log_t < prev_t || log_t > t {
                    return Err(CheckpointError::LogOrder {
                        location: describe(child),
                        log_t,
                        prev_t,
                        checkpoint_t: t,
                    });
                }
                logs.push(LogEntry { t: log_t, bytes });
            }
            _ => {
                return Err(SpecError::Schema { location: describe(child), message: "unknown element".into() }.into());
            }
        }
    }
    Ok(Checkpoint { t, state, logs })
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no checkpoint at t={0}")]
    NotFound(EpochMillis),
    #[error("corrupt checkpoint {path}: {source}")]
    Corrupt { path: PathBuf, source: CheckpointError },
    #[error("corrupt journal {path} line {line}: {reason}")]
    CorruptJournal { path: PathBuf, line: usize, reason: String },
    #[error("spec files in {0} do not match the specs in use")]
    SpecMismatch(PathBuf),
    #[error("store specs: {0}")]
    Spec(#[from] crate::spec::LoadError),
    #[error("log time {t} is earlier than the previous log ({last})")]
    OutOfOrder { t: EpochMillis, last: EpochMillis },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

const NETWORK_FILE: &str = "network.xml";
const PACKET_FILE: &str = "packets.xml";
const JOURNAL_FILE: &str = "pending.log";

/// Writes via a temporary sibling and a rename so readers never see a
/// partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
    file.write_all(contents.as_bytes()).map_err(io_err(&tmp))?;
    file.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn checkpoint_file_time(name: &str) -> Option<EpochMillis> {
    name.strip_prefix("cp_")?.strip_suffix(".xml")?.parse().ok()
}

/// Sealed checkpoints plus the unsealed tail, as seen at one instant.
#[derive(Debug, Clone, Default)]
pub struct History {
    pub checkpoints: Vec<Arc<Checkpoint>>,
    pub pending: Arc<Vec<LogEntry>>,
}

impl History {
    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty() && self.pending.is_empty()
    }

    /// Every log in recording order.
    pub fn logs(&self) -> impl Iterator<Item = &LogEntry> + '_ {
        self.checkpoints.iter().flat_map(|c| c.logs.iter()).chain(self.pending.iter())
    }

    pub fn first_log_time(&self) -> Option<EpochMillis> {
        self.logs().next().map(|l| l.t)
    }

    /// Latest of the last checkpoint time and the last pending log time.
    pub fn last_time(&self) -> Option<EpochMillis> {
        let cp = self.checkpoints.last().map(|c| c.t);
        let pending = self.pending.last().map(|l| l.t);
        cp.max(pending)
    }
}

/// Directory-backed datalogger.
#[derive(Debug)]
pub struct CheckpointStore {
    dir: PathBuf,
    specs: Arc<Specs>,
    log_per_checkpoint: usize,
    checkpoints: BTreeMap<EpochMillis, Arc<Checkpoint>>,
    pending: Arc<Vec<LogEntry>>,
    journal: File,
}

impl CheckpointStore {
    /// Opens (creating if needed) a store for `specs`. An existing store must
    /// have been written with byte-identical spec files.
    pub fn open(dir: impl Into<PathBuf>, specs: Arc<Specs>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for (name, text) in [(NETWORK_FILE, specs.network_xml()), (PACKET_FILE, specs.packet_xml())] {
            let path = dir.join(name);
            match fs::read_to_string(&path) {
                Ok(existing) if existing == text => {}
                Ok(_) => return Err(StoreError::SpecMismatch(dir)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => write_atomic(&path, text)?,
                Err(e) => return Err(StoreError::Io { path, source: e }),
            }
        }
        Self::load(dir, specs)
    }

    /// Opens an existing store using the spec files stored inside it.
    pub fn open_existing(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        let specs = Specs::load(&dir.join(NETWORK_FILE), &dir.join(PACKET_FILE))?;
        Self::load(dir, Arc::new(specs))
    }

    fn load(dir: PathBuf, specs: Arc<Specs>) -> Result<Self, StoreError> {
        let mut checkpoints = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let name = entry.file_name();
            let Some(t) = name.to_str().and_then(checkpoint_file_time) else { continue };
            let path = entry.path();
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let cp =
                parse_checkpoint(&text, &specs).map_err(|source| StoreError::Corrupt { path: path.clone(), source })?;
            if cp.t != t {
                return Err(StoreError::Corrupt {
                    path,
                    source: CheckpointError::Duplicate {
                        location: "file name".into(),
                        what: format!("time {t} vs {}", cp.t),
                    },
                });
            }
            checkpoints.insert(t, Arc::new(cp));
        }

        let journal_path = dir.join(JOURNAL_FILE);
        let mut pending = Vec::new();
        match fs::read_to_string(&journal_path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let raw = parse_log_line(line).map_err(|reason| StoreError::CorruptJournal {
                        path: journal_path.clone(),
                        line: i + 1,
                        reason: reason.to_string(),
                    })?;
                    pending.push(LogEntry::from(&raw));
                }
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(StoreError::Io { path: journal_path, source: e }),
        }
        // A crash between sealing a checkpoint and truncating the journal
        // leaves already-sealed logs behind; drop them.
        if let Some(last) = checkpoints.values().next_back() {
            let sealed_tail = &last.logs;
            if !sealed_tail.is_empty() && pending.starts_with(sealed_tail) {
                pending.drain(..sealed_tail.len());
                write_atomic(&journal_path, &journal_text(&pending))?;
            }
        }
        let journal =
            OpenOptions::new().create(true).append(true).open(&journal_path).map_err(io_err(&journal_path))?;

        Ok(CheckpointStore {
            log_per_checkpoint: specs.network.log_per_checkpoint() as usize,
            dir,
            specs,
            checkpoints,
            pending: Arc::new(pending),
            journal,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn specs(&self) -> &Arc<Specs> {
        &self.specs
    }

    pub fn pending(&self) -> &[LogEntry] {
        &self.pending
    }

    pub fn journal_path(&self) -> PathBuf {
        self.dir.join(JOURNAL_FILE)
    }

    fn last_log_time(&self) -> Option<EpochMillis> {
        self.pending.last().or_else(|| self.checkpoints.values().next_back().and_then(|c| c.logs.last())).map(|l| l.t)
    }

    /// Logs a successfully applied packet; seals and returns a checkpoint
    /// once `LogPerCheckpoint` logs are pending.
    pub fn record(
        &mut self,
        raw: &RawPacket,
        post_state: &NetworkState,
    ) -> Result<Option<Arc<Checkpoint>>, StoreError> {
        if let Some(last) = self.last_log_time() {
            if raw.received_at < last {
                return Err(StoreError::OutOfOrder { t: raw.received_at, last });
            }
        }
        let entry = LogEntry::from(raw);
        let path = self.journal_path();
        self.journal.write_all(format_log_line(&entry.to_raw()).as_bytes()).map_err(io_err(&path))?;
        self.journal.flush().map_err(io_err(&path))?;
        Arc::make_mut(&mut self.pending).push(entry);
        if self.pending.len() >= self.log_per_checkpoint {
            return self.seal(post_state).map(Some);
        }
        Ok(None)
    }

    /// Seals whatever is pending (used on shutdown). No-op when nothing is
    /// pending.
    pub fn seal_pending(&mut self, state: &NetworkState) -> Result<Option<Arc<Checkpoint>>, StoreError> {
        if self.pending.is_empty() {
            return Ok(None);
        }
        self.seal(state).map(Some)
    }

    fn seal(&mut self, state: &NetworkState) -> Result<Arc<Checkpoint>, StoreError> {
        let last_log = self.pending.last().map_or(0, |l| l.t);
        let t = match self.checkpoints.keys().next_back() {
            Some(&prev) if prev >= last_log => prev + 1,
            _ => last_log,
        };
        let cp = Checkpoint { t, state: state.without_activity(), logs: self.pending.to_vec() };
        write_atomic(&self.dir.join(format!("cp_{t}.xml")), &serialize_checkpoint(&cp))?;
        let journal_path = self.journal_path();
        self.journal = File::create(&journal_path).map_err(io_err(&journal_path))?;
        self.journal.sync_all().map_err(io_err(&journal_path))?;
        self.pending = Arc::new(Vec::new());
        let cp = Arc::new(cp);
        self.checkpoints.insert(t, Arc::clone(&cp));
        Ok(cp)
    }

    /// Metadata for checkpoints with `from <= t <= to`, ascending.
    pub fn list_checkpoints(&self, from: EpochMillis, to: EpochMillis) -> Vec<CheckpointMeta> {
        if from > to {
            return Vec::new();
        }
        self.checkpoints.range(from..=to).map(|(_, c)| c.meta()).collect()
    }

    pub fn load_checkpoint(&self, t: EpochMillis) -> Result<Arc<Checkpoint>, StoreError> {
        self.checkpoints.get(&t).cloned().ok_or(StoreError::NotFound(t))
    }

    /// Reads a sealed checkpoint file as stored on disk.
    pub fn checkpoint_xml(&self, t: EpochMillis) -> Result<String, StoreError> {
        if !self.checkpoints.contains_key(&t) {
            return Err(StoreError::NotFound(t));
        }
        let path = self.dir.join(format!("cp_{t}.xml"));
        fs::read_to_string(&path).map_err(io_err(&path))
    }

    pub fn history(&self) -> History {
        History { checkpoints: self.checkpoints.values().cloned().collect(), pending: Arc::clone(&self.pending) }
    }
}

fn journal_text(entries: &[LogEntry]) -> String {
    entries.iter().map(|e| format_log_line(&e.to_raw())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_XML: &str = include_str!("../testdata/checkpoint.xml");

    fn specs() -> Arc<Specs> {
        Arc::new(
            Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml")).unwrap(),
        )
    }

    #[test]
    fn golden_checkpoint() {
        let cp = parse_checkpoint(SAMPLE_XML, &specs()).unwrap();
        assert_eq!(cp.t, 1328163686181);
        assert_eq!(cp.state.nodes.len(), 7);
        assert_eq!(cp.state.link_count(), 6);
        assert_eq!(cp.state.env.raw_props, BTreeMap::from([(1, 11), (2, 1)]));
        assert_eq!(cp.logs.len(), 10);
        assert_eq!(cp.logs[0].t, 1328163457311);
        assert_eq!(cp.state.node(0).unwrap().raw_props, BTreeMap::from([(1, 1), (2, 102), (3, 378)]));
    }

    #[test]
    fn sample_text_reserializes_byte_for_byte() {
        let cp = parse_checkpoint(SAMPLE_XML, &specs()).unwrap();
        assert_eq!(serialize_checkpoint(&cp).trim_end(), SAMPLE_XML.trim_end());
        assert_eq!(parse_checkpoint(&serialize_checkpoint(&cp), &specs()).unwrap(), cp);
    }

    #[test]
    fn single_node_and_empty_forms() {
        let mut state = NetworkState::new();
        state.nodes.insert(4, NodeState { address: 4, raw_props: BTreeMap::from([(1, 3)]), ..Default::default() });
        let cp = Checkpoint { t: 5, state, logs: vec![] };
        assert_eq!(
            serialize_checkpoint(&cp),
            "<Checkpoint t=\"5\">\n  <Node addr=\"4\" att1=\"3.0\"/>\n</Checkpoint>\n"
        );
        let empty = Checkpoint { t: 9, state: NetworkState::new(), logs: vec![] };
        assert_eq!(serialize_checkpoint(&empty), "<Checkpoint t=\"9\"/>\n");
        assert_eq!(parse_checkpoint("<Checkpoint t=\"9\"/>", &specs()).unwrap(), empty);
    }

    #[test]
    fn value_forms() {
        let s = specs();
        let parse = |attr: &str| {
            parse_checkpoint(&format!("<Checkpoint t=\"1\"><Node addr=\"1\" att1=\"{attr}\"/></Checkpoint>"), &s)
        };
        for ok in ["3", "3.0", "3.000"] {
            assert_eq!(parse(ok).unwrap().state.node(1).unwrap().raw_props[&1], 3);
        }
        for bad in ["3.5", "-3", "", "x", ".0"] {
            assert!(matches!(parse(bad), Err(CheckpointError::BadValue { .. })), "{bad:?}");
        }
    }

    #[test]
    fn rejects_bad_content() {
        let s = specs();
        let unknown = "<Checkpoint t=\"1\"><Node addr=\"1\" att7=\"3.0\"/></Checkpoint>";
        assert!(matches!(parse_checkpoint(unknown, &s), Err(CheckpointError::UnknownProperty { id: 7, .. })));
        let stray = "<Checkpoint t=\"1\"><Node addr=\"1\" color=\"red\"/></Checkpoint>";
        assert!(matches!(parse_checkpoint(stray, &s), Err(CheckpointError::Xml(_))));
        let bad_log = "<Checkpoint t=\"9\"><L p=\"0|9|\" t=\"1\"/></Checkpoint>";
        assert!(matches!(parse_checkpoint(bad_log, &s), Err(CheckpointError::BadLog { .. })));
        let late_log = "<Checkpoint t=\"1\"><L p=\"0|4|B|0|1|\" t=\"2\"/></Checkpoint>";
        assert!(matches!(parse_checkpoint(late_log, &s), Err(CheckpointError::LogOrder { .. })));
        let dup = "<Checkpoint t=\"1\"><Node addr=\"1\"/><Node addr=\"1\"/></Checkpoint>";
        assert!(matches!(parse_checkpoint(dup, &s), Err(CheckpointError::Duplicate { .. })));
        assert!(matches!(parse_checkpoint("<Checkpoint", &s), Err(CheckpointError::Xml(SpecError::MalformedXml(_)))));
        let unknown_el = "<Checkpoint t=\"1\"><Edge/></Checkpoint>";
        assert!(parse_checkpoint(unknown_el, &s).is_err());
    }

    fn env_packet(t: u64, channel: u8) -> RawPacket {
        RawPacket::new(vec![0, 4, channel, 0, 1], t)
    }

    #[test]
    fn store_cadence_and_listing() {
        let dir = tempfile::tempdir().unwrap();
        let specs = specs();
        let mut store = CheckpointStore::open(dir.path(), Arc::clone(&specs)).unwrap();
        let mut state = NetworkState::new();
        let mut sealed = Vec::new();
        for i in 0..250u64 {
            let raw = env_packet(1000 + i, (i % 20) as u8);
            let p = decode_packet(&raw, &specs.network, &specs.packets).unwrap();
            state.apply_packet(&p).unwrap();
            if let Some(cp) = store.record(&raw, &state).unwrap() {
                sealed.push(cp);
            }
        }
        assert_eq!(sealed.len(), 2);
        assert!(sealed.iter().all(|c| c.logs.len() == 100));
        assert_eq!(store.pending().len(), 50);
        assert_eq!(store.list_checkpoints(0, u64::MAX).len(), 2);
        assert!(store.list_checkpoints(10, 5).is_empty());
        assert!(matches!(store.load_checkpoint(42), Err(StoreError::NotFound(42))));
        assert_eq!(store.load_checkpoint(sealed[1].t).unwrap().logs, sealed[1].logs);

        // Reopen: same checkpoints and pending journal.
        drop(store);
        let reopened = CheckpointStore::open_existing(dir.path()).unwrap();
        assert_eq!(reopened.list_checkpoints(0, u64::MAX).len(), 2);
        assert_eq!(reopened.pending().len(), 50);
        assert_eq!(reopened.pending()[0].t, 1200);
    }

    #[test]
    fn store_rejects_out_of_order_and_foreign_specs() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::open(dir.path(), specs()).unwrap();
        let state = NetworkState::new();
        store.record(&env_packet(10, 1), &state).unwrap();
        assert!(matches!(store.record(&env_packet(9, 1), &state), Err(StoreError::OutOfOrder { t: 9, last: 10 })));
        drop(store);
        let other = Arc::new(
            Specs::parse(
                &include_str!("../testdata/network.xml").replace("100", "5"),
                include_str!("../testdata/packets.xml"),
            )
            .unwrap(),
        );
        assert!(matches!(CheckpointStore::open(dir.path(), other), Err(StoreError::SpecMismatch(_))));
    }

    #[test]
    fn sealing_keeps_times_strictly_increasing() {
        let dir = tempfile::tempdir().unwrap();
        let specs = Arc::new(
            Specs::parse(
                &include_str!("../testdata/network.xml").replace("LogPerCheckpoint=\"100\"", "LogPerCheckpoint=\"1\""),
                include_str!("../testdata/packets.xml"),
            )
            .unwrap(),
        );
        let mut store = CheckpointStore::open(dir.path(), specs).unwrap();
        let state = NetworkState::new();
        let a = store.record(&env_packet(5, 1), &state).unwrap().unwrap();
        let b = store.record(&env_packet(5, 2), &state).unwrap().unwrap();
        assert_eq!(a.t, 5);
        assert_eq!(b.t, 6);
        assert!(store.pending().is_empty());
    }

    #[test]
    fn seal_pending_on_shutdown() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::open(dir.path(), specs()).unwrap();
        let state = NetworkState::new();
        assert!(store.seal_pending(&state).unwrap().is_none());
        store.record(&env_packet(3, 1), &state).unwrap();
        let cp = store.seal_pending(&state).unwrap().unwrap();
        assert_eq!(cp.logs.len(), 1);
        assert!(fs::read_to_string(store.journal_path()).unwrap().is_empty());
        assert_eq!(store.checkpoint_xml(cp.t).unwrap(), serialize_checkpoint(&cp));
    }

    #[test]
    fn reopen_drops_journal_entries_already_sealed() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = CheckpointStore::open(dir.path(), specs()).unwrap();
        let state = NetworkState::new();
        store.record(&env_packet(3, 1), &state).unwrap();
        let journal = fs::read_to_string(store.journal_path()).unwrap();
        store.seal_pending(&state).unwrap();
        // Simulate a crash before the journal was truncated.
        fs::write(store.journal_path(), journal).unwrap();
        drop(store);
        let reopened = CheckpointStore::open_existing(dir.path()).unwrap();
        assert!(reopened.pending().is_empty());
    }
}
