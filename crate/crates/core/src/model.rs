//! The abstract network: nodes, directed links and the environment.
//!
//! State holds raw readings only. Engineering units are produced on read by
//! [`converted_view`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{EpochMillis, ParsedPacket};
use crate::convert::{EvalEnv, EvalError};
use crate::spec::{NetworkSpec, Property, PropertyKind};

pub type Address = u64;
pub type PropertyId = u32;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkState {
    pub dest: Address,
    pub raw_props: BTreeMap<PropertyId, u64>,
    /// Time of the last packet that touched this link; `None` after a restore
    /// from a checkpoint, which does not carry activity times.
    pub last_seen: Option<EpochMillis>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeState {
    pub address: Address,
    /// Node properties other than the address.
    pub raw_props: BTreeMap<PropertyId, u64>,
    pub links: BTreeMap<Address, LinkState>,
    pub last_seen: Option<EpochMillis>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub raw_props: BTreeMap<PropertyId, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkState {
    pub nodes: BTreeMap<Address, NodeState>,
    pub env: EnvState,
    pub packet_count: u64,
    pub discard_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Subject {
    Node { addr: Address },
    Link { src: Address, dst: Address },
    Env,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "attr", content = "id", rename_all = "snake_case")]
pub enum Attr {
    Property(PropertyId),
    LastSeen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Change {
    /// The subject now exists (with no attributes yet).
    Created {
        subject: Subject,
    },
    /// The subject and everything under it is gone.
    Removed {
        subject: Subject,
    },
    Set {
        subject: Subject,
        attr: Attr,
        old: Option<u64>,
        new: u64,
    },
    Cleared {
        subject: Subject,
        attr: Attr,
        old: u64,
    },
}

/// An ordered list of changes; applying them in order to the pre-state
/// yields the post-state.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateDiff {
    pub changes: Vec<Change>,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn len(&self) -> usize {
        self.changes.len()
    }

    pub fn extend(&mut self, other: StateDiff) {
        self.changes.extend(other.changes);
    }

    /// True when every change only touches `last_seen`.
    pub fn only_activity(&self) -> bool {
        self.changes.iter().all(|c| {
            matches!(c, Change::Set { attr: Attr::LastSeen, .. } | Change::Cleared { attr: Attr::LastSeen, .. })
        })
    }

    /// Changes that turn `from` into `to` (nodes, links, env; counters are
    /// not part of a diff).
    pub fn between(from: &NetworkState, to: &NetworkState) -> StateDiff {
        let mut changes = Vec::new();
        for (addr, old) in &from.nodes {
            if !to.nodes.contains_key(addr) {
                changes.push(Change::Removed { subject: Subject::Node { addr: *addr } });
            } else {
                let new = &to.nodes[addr];
                for (dst, old_link) in &old.links {
                    let subject = Subject::Link { src: *addr, dst: *dst };
                    match new.links.get(dst) {
                        None => changes.push(Change::Removed { subject }),
                        Some(new_link) => diff_attrs(
                            subject,
                            &old_link.raw_props,
                            old_link.last_seen,
                            &new_link.raw_props,
                            new_link.last_seen,
                            &mut changes,
                        ),
                    }
                }
                for (dst, new_link) in &new.links {
                    if !old.links.contains_key(dst) {
                        let subject = Subject::Link { src: *addr, dst: *dst };
                        changes.push(Change::Created { subject });
                        diff_attrs(
                            subject,
                            &BTreeMap::new(),
                            None,
                            &new_link.raw_props,
                            new_link.last_seen,
                            &mut changes,
                        );
                    }
                }
                diff_attrs(
                    Subject::Node { addr: *addr },
                    &old.raw_props,
                    old.last_seen,
                    &new.raw_props,
                    new.last_seen,
                    &mut changes,
                );
            }
        }
        for (addr, new) in &to.nodes {
            if from.nodes.contains_key(addr) {
                continue;
            }
            let subject = Subject::Node { addr: *addr };
            changes.push(Change::Created { subject });
            diff_attrs(subject, &BTreeMap::new(), None, &new.raw_props, new.last_seen, &mut changes);
            for (dst, link) in &new.links {
                let subject = Subject::Link { src: *addr, dst: *dst };
                changes.push(Change::Created { subject });
                diff_attrs(subject, &BTreeMap::new(), None, &link.raw_props, link.last_seen, &mut changes);
            }
        }
        diff_attrs(Subject::Env, &from.env.raw_props, None, &to.env.raw_props, None, &mut changes);
        StateDiff { changes }
    }
}

fn diff_attrs(
    subject: Subject,
    old: &BTreeMap<PropertyId, u64>,
    old_seen: Option<EpochMillis>,
    new: &BTreeMap<PropertyId, u64>,
    new_seen: Option<EpochMillis>,
    out: &mut Vec<Change>,
) {
    for (id, &old_value) in old {
        match new.get(id) {
            None => out.push(Change::Cleared { subject, attr: Attr::Property(*id), old: old_value }),
            Some(&v) if v != old_value => {
                out.push(Change::Set { subject, attr: Attr::Property(*id), old: Some(old_value), new: v })
            }
            Some(_) => {}
        }
    }
    for (id, &v) in new {
        if !old.contains_key(id) {
            out.push(Change::Set { subject, attr: Attr::Property(*id), old: None, new: v });
        }
    }
    match (old_seen, new_seen) {
        (Some(o), None) => out.push(Change::Cleared { subject, attr: Attr::LastSeen, old: o }),
        (o, Some(n)) if o != Some(n) => out.push(Change::Set { subject, attr: Attr::LastSeen, old: o, new: n }),
        _ => {}
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApplyError {
    #[error("packet {packet_id} carries Node fields but no address field")]
    MissingAddress { packet_id: u64 },
}

impl NetworkState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, addr: Address) -> Option<&NodeState> {
        self.nodes.get(&addr)
    }

    pub fn link(&self, src: Address, dst: Address) -> Option<&LinkState> {
        self.nodes.get(&src)?.links.get(&dst)
    }

    pub fn link_count(&self) -> usize {
        self.nodes.values().map(|n| n.links.len()).sum()
    }

    /// Applies one decoded packet and returns the minimal diff.
    ///
    /// The first address field names the subject node (created on first
    /// sight), the second one the link destination. Link fields upsert the
    /// directed link subject→destination, other Node fields update the
    /// subject, Envr fields update the environment. On error nothing but the
    /// discard counter changes.
    pub fn apply_packet(&mut self, packet: &ParsedPacket) -> Result<StateDiff, ApplyError> {
        let mut subject = None;
        let mut dest = None;
        let mut has_node_fields = false;
        for (field, value) in packet.fields() {
            if field.is_address() {
                if subject.is_none() {
                    subject = Some(value);
                } else if dest.is_none() {
                    dest = Some(value);
                }
            }
            if field.kind == PropertyKind::Node {
                has_node_fields = true;
            }
        }
        if has_node_fields && subject.is_none() {
            self.discard_count += 1;
            return Err(ApplyError::MissingAddress { packet_id: packet.packet_id() });
        }

        let t = packet.received_at;
        let mut changes = Vec::new();

        if let Some(addr) = subject {
            let node_subject = Subject::Node { addr };
            let node = self.nodes.entry(addr).or_insert_with(|| {
                changes.push(Change::Created { subject: node_subject });
                NodeState { address: addr, ..NodeState::default() }
            });
            for (field, value) in packet.fields() {
                if field.kind == PropertyKind::Node && !field.is_address() {
                    set_prop(&mut node.raw_props, node_subject, field.property_id, value, &mut changes);
                }
            }
            set_seen(&mut node.last_seen, node_subject, t, &mut changes);

            let link_fields: Vec<_> = packet.fields().filter(|(f, _)| f.kind == PropertyKind::Link).collect();
            if let (Some(dst), false) = (dest, link_fields.is_empty()) {
                let link_subject = Subject::Link { src: addr, dst };
                let link = node.links.entry(dst).or_insert_with(|| {
                    changes.push(Change::Created { subject: link_subject });
                    LinkState { dest: dst, ..LinkState::default() }
                });
                for (field, value) in link_fields {
                    set_prop(&mut link.raw_props, link_subject, field.property_id, value, &mut changes);
                }
                set_seen(&mut link.last_seen, link_subject, t, &mut changes);
            }
        }

        for (field, value) in packet.fields() {
            if field.kind == PropertyKind::Envr {
                set_prop(&mut self.env.raw_props, Subject::Env, field.property_id, value, &mut changes);
            }
        }
        self.packet_count += 1;
        Ok(StateDiff { changes })
    }

    /// Applies a diff produced against this state (or an equal one).
    pub fn apply_diff(&mut self, diff: &StateDiff) {
        for change in &diff.changes {
            match change {
                Change::Created { subject } => {
                    self.ensure(*subject);
                }
                Change::Removed { subject } => match *subject {
                    Subject::Node { addr } => {
                        self.nodes.remove(&addr);
                    }
                    Subject::Link { src, dst } => {
                        if let Some(n) = self.nodes.get_mut(&src) {
                            n.links.remove(&dst);
                        }
                    }
                    Subject::Env => self.env = EnvState::default(),
                },
                Change::Set { subject, attr, new, .. } => {
                    let (props, seen) = self.ensure(*subject);
                    match attr {
                        Attr::Property(id) => {
                            props.insert(*id, *new);
                        }
                        Attr::LastSeen => {
                            if let Some(seen) = seen {
                                *seen = Some(*new);
                            }
                        }
                    }
                }
                Change::Cleared { subject, attr, .. } => {
                    let (props, seen) = self.ensure(*subject);
                    match attr {
                        Attr::Property(id) => {
                            props.remove(id);
                        }
                        Attr::LastSeen => {
                            if let Some(seen) = seen {
                                *seen = None;
                            }
                        }
                    }
                }
            }
        }
    }

    fn ensure(&mut self, subject: Subject) -> (&mut BTreeMap<PropertyId, u64>, Option<&mut Option<EpochMillis>>) {
        match subject {
            Subject::Node { addr } => {
                let node = self.nodes.entry(addr).or_insert_with(|| NodeState { address: addr, ..Default::default() });
                (&mut node.raw_props, Some(&mut node.last_seen))
            }
            Subject::Link { src, dst } => {
                let node = self.nodes.entry(src).or_insert_with(|| NodeState { address: src, ..Default::default() });
                let link = node.links.entry(dst).or_insert_with(|| LinkState { dest: dst, ..Default::default() });
                (&mut link.raw_props, Some(&mut link.last_seen))
            }
            Subject::Env => (&mut self.env.raw_props, None),
        }
    }

    /// The state as a checkpoint records it: values and topology, with
    /// activity times and counters cleared.
    pub fn without_activity(&self) -> NetworkState {
        let mut out = NetworkState { nodes: self.nodes.clone(), env: self.env.clone(), ..Default::default() };
        for node in out.nodes.values_mut() {
            node.last_seen = None;
            for link in node.links.values_mut() {
                link.last_seen = None;
            }
        }
        out
    }

    /// True when nodes, links and environment values match, ignoring
    /// activity times and counters. This is exactly what a checkpoint records.
    pub fn same_values(&self, other: &NetworkState) -> bool {
        self.env == other.env
            && self.nodes.len() == other.nodes.len()
            && self.nodes.iter().zip(other.nodes.iter()).all(|((a, x), (b, y))| {
                a == b
                    && x.raw_props == y.raw_props
                    && x.links.len() == y.links.len()
                    && x.links
                        .iter()
                        .zip(y.links.iter())
                        .all(|((d1, l1), (d2, l2))| d1 == d2 && l1.raw_props == l2.raw_props)
            })
    }
}

fn set_prop(
    props: &mut BTreeMap<PropertyId, u64>,
    subject: Subject,
    id: PropertyId,
    value: u64,
    changes: &mut Vec<Change>,
) {
    let old = props.insert(id, value);
    if old != Some(value) {
        changes.push(Change::Set { subject, attr: Attr::Property(id), old, new: value });
    }
}

fn set_seen(seen: &mut Option<EpochMillis>, subject: Subject, t: EpochMillis, changes: &mut Vec<Change>) {
    let old = seen.replace(t);
    if old != Some(t) {
        changes.push(Change::Set { subject, attr: Attr::LastSeen, old, new: t });
    }
}

/// A raw reading and its engineering-unit value, or why it has none.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedValue {
    pub id: PropertyId,
    pub name: String,
    pub raw: u64,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ConvertedValue {
    pub fn is_convertible(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedLink {
    pub dest: Address,
    pub last_seen: Option<EpochMillis>,
    pub properties: Vec<ConvertedValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedNode {
    pub address: Address,
    pub last_seen: Option<EpochMillis>,
    pub properties: Vec<ConvertedValue>,
    pub links: Vec<ConvertedLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedState {
    pub packet_count: u64,
    pub discard_count: u64,
    pub nodes: Vec<ConvertedNode>,
    pub env: Vec<ConvertedValue>,
}

impl ConvertedState {
    pub fn node(&self, addr: Address) -> Option<&ConvertedNode> {
        self.nodes.iter().find(|n| n.address == addr)
    }
}

impl ConvertedNode {
    pub fn property(&self, name: &str) -> Option<&ConvertedValue> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// Converts one subject's raw values. Dependents resolve to raw values of the
/// same subject; results come back in property-ID order.
fn convert_subject(
    net: &NetworkSpec,
    kind: PropertyKind,
    raw: &BTreeMap<PropertyId, u64>,
    address: Option<Address>,
) -> Vec<ConvertedValue> {
    let mut env = EvalEnv::new();
    let mut known = |p: &Property, v: u64| env.insert(p.name.clone(), v);
    if let (Some(addr), Some(p)) = (address, net.address_property()) {
        known(p, addr);
    }
    for (id, v) in raw {
        if let Some(p) = net.lookup(kind, *id) {
            known(p, *v);
        }
    }
    let mut out: Vec<ConvertedValue> = Vec::with_capacity(raw.len());
    for property in net.conversion_order(kind) {
        let Some(&raw_value) = raw.get(&property.id) else { continue };
        let result: Result<f64, EvalError> = property.convert.eval(raw_value, &env);
        out.push(ConvertedValue {
            id: property.id,
            name: property.name.clone(),
            raw: raw_value,
            value: result.as_ref().ok().copied(),
            error: result.err().map(|e| e.to_string()),
        });
    }
    // Values for IDs the spec no longer defines are kept, unconverted.
    for (id, v) in raw {
        if net.lookup(kind, *id).is_none() {
            out.push(ConvertedValue {
                id: *id,
                name: format!("att{id}"),
                raw: *v,
                value: None,
                error: Some("no such property in the network spec".into()),
            });
        }
    }
    out.sort_by_key(|v| v.id);
    out
}

/// One decoded field with its engineering-unit value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvertedField {
    pub field: String,
    pub kind: PropertyKind,
    #[serde(flatten)]
    pub value: ConvertedValue,
}

/// Converts the fields of `packet` in the context of `state`, the state
/// after the packet was applied, so dependents see the packet's own values.
pub fn convert_fields(packet: &ParsedPacket, state: &NetworkState, net: &NetworkSpec) -> Vec<ConvertedField> {
    let mut addresses = packet.fields().filter(|(f, _)| f.is_address()).map(|(_, v)| v);
    let (subject, dest) = (addresses.next(), addresses.next());
    let node = subject.and_then(|a| state.node(a));
    let node_values = node.map(|n| convert_subject(net, PropertyKind::Node, &n.raw_props, Some(n.address)));
    let link_values = match (node, dest) {
        (Some(n), Some(d)) => n.links.get(&d).map(|l| convert_subject(net, PropertyKind::Link, &l.raw_props, None)),
        _ => None,
    };
    let env_values = convert_subject(net, PropertyKind::Envr, &state.env.raw_props, None);
    packet
        .fields()
        .map(|(field, raw)| {
            let property = net.lookup(field.kind, field.property_id).expect("resolved field");
            let found = match field.kind {
                _ if field.is_address() => None,
                PropertyKind::Node => node_values.as_deref(),
                PropertyKind::Link => link_values.as_deref(),
                PropertyKind::Envr => Some(env_values.as_slice()),
            }
            .and_then(|values| values.iter().find(|v| v.id == property.id && v.raw == raw));
            let value = match found {
                Some(v) => v.clone(),
                None => {
                    let env: EvalEnv = [(property.name.clone(), raw)].into_iter().collect();
                    let result = property.convert.eval(raw, &env);
                    ConvertedValue {
                        id: property.id,
                        name: property.name.clone(),
                        raw,
                        value: result.as_ref().ok().copied(),
                        error: result.err().map(|e| e.to_string()),
                    }
                }
            };
            ConvertedField { field: field.name.clone(), kind: field.kind, value }
        })
        .collect()
}

pub fn converted_view(state: &NetworkState, net: &NetworkSpec) -> ConvertedState {
    let nodes = state
        .nodes
        .values()
        .map(|n| ConvertedNode {
            address: n.address,
            last_seen: n.last_seen,
            properties: convert_subject(net, PropertyKind::Node, &n.raw_props, Some(n.address)),
            links: n
                .links
                .values()
                .map(|l| ConvertedLink {
                    dest: l.dest,
                    last_seen: l.last_seen,
                    properties: convert_subject(net, PropertyKind::Link, &l.raw_props, None),
                })
                .collect(),
        })
        .collect();
    ConvertedState {
        packet_count: state.packet_count,
        discard_count: state.discard_count,
        nodes,
        env: convert_subject(net, PropertyKind::Envr, &state.env.raw_props, None),
    }
}
