//! Network and packet specifications.
//!
//! Both dialects are parsed in strict mode: unknown elements or attributes are
//! rejected with a diagnostic naming the offending node. Parsed specs are
//! immutable and can be shared freely between threads.

mod network;
mod packet;
pub(crate) mod xml;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convert::ExprError;

pub use network::{lookup_property, parse_network_spec, NetworkSpec, Property};
pub use packet::{parse_packet_spec, Field, PacketFormat, PacketSpec};

/// Property identifier of the node address.
pub const ADDRESS_PROPERTY_ID: u32 = 0;

/// Widest integer a property or packet ID may occupy.
pub const MAX_FIELD_BYTES: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PropertyKind {
    Node,
    Link,
    Envr,
}

impl PropertyKind {
    pub const ALL: [PropertyKind; 3] = [PropertyKind::Node, PropertyKind::Link, PropertyKind::Envr];

    pub fn as_str(self) -> &'static str {
        match self {
            PropertyKind::Node => "Node",
            PropertyKind::Link => "Link",
            PropertyKind::Envr => "Envr",
        }
    }

    fn container_element(self) -> &'static str {
        match self {
            PropertyKind::Node => "NodeProperties",
            PropertyKind::Link => "LinkProperties",
            PropertyKind::Envr => "EnvrProperties",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PropertyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PropertyKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Node" => Ok(PropertyKind::Node),
            "Link" => Ok(PropertyKind::Link),
            "Envr" => Ok(PropertyKind::Envr),
            _ => Err(()),
        }
    }
}

/// Largest unsigned value representable in `length` bytes.
pub fn capacity(length: u8) -> u64 {
    if length >= 8 {
        u64::MAX
    } else {
        (1u64 << (8 * u32::from(length))) - 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("{location}: {message}")]
    Schema { location: String, message: String },
    #[error("LogPerCheckpoint must be at least 1")]
    InvalidLogPerCheckpoint,
    #[error("{kind} property {id}: duplicate ID")]
    DuplicateProperty { kind: PropertyKind, id: u32 },
    #[error("{kind} property {id}: duplicate name {name:?}")]
    DuplicateName { kind: PropertyKind, id: u32, name: String },
    #[error("{kind} property {id}: empty name")]
    EmptyName { kind: PropertyKind, id: u32 },
    #[error("{kind} property {id}: length {length} is outside 1..=8 bytes")]
    InvalidLength { kind: PropertyKind, id: u32, length: u64 },
    #[error("{kind} property {id}: min {min} > max {max}")]
    RangeInverted { kind: PropertyKind, id: u32, min: u64, max: u64 },
    #[error("{kind} property {id}: max {max} exceeds {capacity}, the capacity of {length} byte(s)")]
    ExceedsLength { kind: PropertyKind, id: u32, max: u64, length: u8, capacity: u64 },
    #[error("{kind} property {id}: invalid convert expression: {error}")]
    BadExpression { kind: PropertyKind, id: u32, error: ExprError },
    #[error("{kind} property {id}: convert references unknown {kind} property [{name}]")]
    UnknownDependent { kind: PropertyKind, id: u32, name: String },
    #[error("{kind} properties: dependency cycle among {names:?}")]
    DependencyCycle { kind: PropertyKind, names: Vec<String> },
    #[error("PacketIDLength {0} is outside 1..=8 bytes")]
    InvalidPacketIdLength(u64),
    #[error("packet {packet_id}: duplicate packet ID")]
    DuplicatePacket { packet_id: u64 },
    #[error("packet {packet_id}: ID does not fit in {length} byte(s)")]
    PacketIdOverflow { packet_id: u64, length: u8 },
    #[error("packet {packet_id}: field {name:?} references unknown {kind} property {id}")]
    UnknownFieldProperty { packet_id: u64, kind: PropertyKind, id: u64, name: String },
    #[error("packet {packet_id}: field at position {index} has an empty name")]
    EmptyFieldName { packet_id: u64, index: usize },
    #[error("packet {packet_id}: {count} address fields (at most 2 allowed)")]
    TooManyAddresses { packet_id: u64, count: usize },
    #[error("packet {packet_id}: Link fields require exactly two address fields, found {count}")]
    LinkWithoutAddresses { packet_id: u64, count: usize },
    #[error("packet {packet_id}: carries Node fields but the network spec has no Node property 0")]
    MissingAddressProperty { packet_id: u64 },
}

/// A network spec, its packet spec, and the exact file texts they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Specs {
    pub network: NetworkSpec,
    pub packets: PacketSpec,
    network_xml: String,
    packet_xml: String,
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Spec { path: String, source: SpecError },
}

impl Specs {
    pub fn parse(network_xml: &str, packet_xml: &str) -> Result<Self, SpecError> {
        let network = parse_network_spec(network_xml)?;
        let packets = parse_packet_spec(packet_xml, &network)?;
        Ok(Specs { network, packets, network_xml: network_xml.to_string(), packet_xml: packet_xml.to_string() })
    }

    pub fn load(network_path: &Path, packet_path: &Path) -> Result<Self, LoadError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| LoadError::Io { path: p.display().to_string(), source })
        };
        let network_xml = read(network_path)?;
        let packet_xml = read(packet_path)?;
        let network = parse_network_spec(&network_xml)
            .map_err(|source| LoadError::Spec { path: network_path.display().to_string(), source })?;
        let packets = parse_packet_spec(&packet_xml, &network)
            .map_err(|source| LoadError::Spec { path: packet_path.display().to_string(), source })?;
        Ok(Specs { network, packets, network_xml, packet_xml })
    }

    /// The network specification file exactly as it was read.
    pub fn network_xml(&self) -> &str {
        &self.network_xml
    }

    pub fn packet_xml(&self) -> &str {
        &self.packet_xml
    }
}
