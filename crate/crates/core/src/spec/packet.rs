use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::network::NetworkSpec;
use super::xml::{
    check_attributes, describe, element_children, escape, expect_name, leaf_text, parse_document, required_attr,
    uint_attr,
};
use super::{capacity, PropertyKind, SpecError, ADDRESS_PROPERTY_ID, MAX_FIELD_BYTES};

/// One slot of a packet, bound to a property by (kind, id).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Field {
    pub kind: PropertyKind,
    pub property_id: u32,
    pub name: String,
    /// Byte length of the bound property.
    pub length: u8,
}

impl Field {
    pub fn is_address(&self) -> bool {
        self.kind == PropertyKind::Node && self.property_id == ADDRESS_PROPERTY_ID
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketFormat {
    pub packet_id: u64,
    pub description: String,
    pub fields: Vec<Field>,
    id_length: u8,
    total_length: usize,
}

impl PacketFormat {
    /// Packet ID length plus the lengths of all fields.
    pub fn total_length(&self) -> usize {
        self.total_length
    }

    pub fn id_length(&self) -> u8 {
        self.id_length
    }

    /// Positions of Node property 0 fields: the subject first, then the link
    /// destination when present.
    pub fn address_positions(&self) -> Vec<usize> {
        self.fields.iter().enumerate().filter(|(_, f)| f.is_address()).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketSpec {
    packet_id_length: u8,
    packets: Vec<Arc<PacketFormat>>,
    by_id: BTreeMap<u64, usize>,
}

impl PacketSpec {
    pub fn packet_id_length(&self) -> u8 {
        self.packet_id_length
    }

    /// Formats in document order.
    pub fn packets(&self) -> &[Arc<PacketFormat>] {
        &self.packets
    }

    pub fn get(&self, packet_id: u64) -> Option<&Arc<PacketFormat>> {
        self.by_id.get(&packet_id).map(|&i| &self.packets[i])
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        if self.packets.is_empty() {
            let _ = writeln!(out, "<PacketSpecification PacketIDLength=\"{}\"/>", self.packet_id_length);
            return out;
        }
        let _ = writeln!(out, "<PacketSpecification PacketIDLength=\"{}\">", self.packet_id_length);
        for p in &self.packets {
            let _ = writeln!(out, "  <Packet ID=\"{}\" description=\"{}\">", p.packet_id, escape(&p.description));
            for f in &p.fields {
                let _ = writeln!(
                    out,
                    "    <Field ID=\"{}\" type=\"{}\">{}</Field>",
                    f.property_id,
                    f.kind,
                    escape(&f.name)
                );
            }
            out.push_str("  </Packet>\n");
        }
        out.push_str("</PacketSpecification>\n");
        out
    }
}

pub fn parse_packet_spec(xml_text: &str, net: &NetworkSpec) -> Result<PacketSpec, SpecError> {
    let doc = parse_document(xml_text)?;
    let root = doc.root_element();
    expect_name(root, "PacketSpecification")?;
    check_attributes(root, &["PacketIDLength"])?;
    let raw_len = uint_attr(root, "PacketIDLength")?;
    if raw_len == 0 || raw_len > u64::from(MAX_FIELD_BYTES) {
        return Err(SpecError::InvalidPacketIdLength(raw_len));
    }
    let packet_id_length = raw_len as u8;

    let mut packets = Vec::new();
    let mut by_id = BTreeMap::new();
    for node in element_children(root)? {
        expect_name(node, "Packet")?;
        check_attributes(node, &["ID", "description"])?;
        let packet_id = uint_attr(node, "ID")?;
        if packet_id > capacity(packet_id_length) {
            return Err(SpecError::PacketIdOverflow { packet_id, length: packet_id_length });
        }
        if by_id.contains_key(&packet_id) {
            return Err(SpecError::DuplicatePacket { packet_id });
        }
        let description = node.attribute("description").unwrap_or("").to_string();

        let mut fields = Vec::new();
        for (index, field_node) in element_children(node)?.into_iter().enumerate() {
            expect_name(field_node, "Field")?;
            check_attributes(field_node, &["ID", "type"])?;
            let id = uint_attr(field_node, "ID")?;
            let type_text = required_attr(field_node, "type")?;
            let kind: PropertyKind = type_text.parse().map_err(|_| SpecError::Schema {
                location: describe(field_node),
                message: format!("type {type_text:?} is not one of Node, Link, Envr"),
            })?;
            let name = leaf_text(field_node)?;
            if name.is_empty() {
                return Err(SpecError::EmptyFieldName { packet_id, index });
            }
            let property = u32::try_from(id)
                .ok()
                .and_then(|id32| net.lookup(kind, id32))
                .ok_or_else(|| SpecError::UnknownFieldProperty { packet_id, kind, id, name: name.clone() })?;
            fields.push(Field { kind, property_id: property.id, name, length: property.length });
        }

        let addresses = fields.iter().filter(|f| f.is_address()).count();
        if addresses > 2 {
            return Err(SpecError::TooManyAddresses { packet_id, count: addresses });
        }
        if fields.iter().any(|f| f.kind == PropertyKind::Link) && addresses != 2 {
            return Err(SpecError::LinkWithoutAddresses { packet_id, count: addresses });
        }
        if fields.iter().any(|f| f.kind == PropertyKind::Node) && net.address_property().is_none() {
            return Err(SpecError::MissingAddressProperty { packet_id });
        }

        let total_length = usize::from(packet_id_length) + fields.iter().map(|f| usize::from(f.length)).sum::<usize>();
        by_id.insert(packet_id, packets.len());
        packets.push(Arc::new(PacketFormat {
            packet_id,
            description,
            fields,
            id_length: packet_id_length,
            total_length,
        }));
    }
    Ok(PacketSpec { packet_id_length, packets, by_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::parse_network_spec;

    const NETWORK_XML: &str = include_str!("../../testdata/network.xml");
    const PACKET_XML: &str = include_str!("../../testdata/packets.xml");

    fn net() -> NetworkSpec {
        parse_network_spec(NETWORK_XML).unwrap()
    }

    #[test]
    fn golden_packet_spec() {
        let pkts = parse_packet_spec(PACKET_XML, &net()).unwrap();
        assert_eq!(pkts.packet_id_length(), 2);
        let lengths: Vec<_> = pkts.packets().iter().map(|p| (p.packet_id, p.total_length())).collect();
        assert_eq!(lengths, [(1, 8), (2, 8), (3, 5), (4, 5)]);
        let assoc = pkts.get(1).unwrap();
        assert_eq!(assoc.description, "Associate");
        assert_eq!(assoc.address_positions(), [0, 1]);
        assert_eq!(pkts.get(2).unwrap().description, "UpdateTemperature");
    }

    #[test]
    fn unknown_field_property() {
        let text =
            PACKET_XML.replace(r#"<Field ID="3" type="Node">VRef</Field>"#, r#"<Field ID="9" type="Node">VRef</Field>"#);
        assert!(matches!(
            parse_packet_spec(&text, &net()),
            Err(SpecError::UnknownFieldProperty { packet_id: 2, kind: PropertyKind::Node, id: 9, .. })
        ));
    }

    #[test]
    fn empty_catalog_is_valid() {
        let pkts = parse_packet_spec(r#"<PacketSpecification PacketIDLength="2"/>"#, &net()).unwrap();
        assert!(pkts.packets().is_empty());
    }

    fn single(fields: &str) -> String {
        format!(
            r#"<PacketSpecification PacketIDLength="1"><Packet ID="9" description="T">{fields}</Packet></PacketSpecification>"#
        )
    }

    #[test]
    fn address_rules() {
        let a = r#"<Field ID="0" type="Node">A</Field>"#;
        let link = r#"<Field ID="1" type="Link">S</Field>"#;
        let three = single(&format!("{a}{a}{a}"));
        assert!(matches!(parse_packet_spec(&three, &net()), Err(SpecError::TooManyAddresses { count: 3, .. })));
        let one_with_link = single(&format!("{a}{link}"));
        assert!(matches!(
            parse_packet_spec(&one_with_link, &net()),
            Err(SpecError::LinkWithoutAddresses { count: 1, .. })
        ));
        assert!(parse_packet_spec(&single(&format!("{a}{a}{link}")), &net()).is_ok());
    }

    #[test]
    fn node_fields_need_address_property() {
        let net = parse_network_spec(
            "<NetworkSpecification LogPerCheckpoint=\"1\"><NodeProperties>\
             <Property ID=\"1\" convert=\"x\" length=\"1\" max=\"1\" min=\"0\">F</Property>\
             </NodeProperties></NetworkSpecification>",
        )
        .unwrap();
        let text = single(r#"<Field ID="1" type="Node">F</Field>"#);
        assert_eq!(parse_packet_spec(&text, &net), Err(SpecError::MissingAddressProperty { packet_id: 9 }));
    }

    #[test]
    fn duplicate_and_oversized_ids() {
        let dup = r#"<PacketSpecification PacketIDLength="1"><Packet ID="1" description="a"/><Packet ID="1" description="b"/></PacketSpecification>"#;
        assert_eq!(parse_packet_spec(dup, &net()), Err(SpecError::DuplicatePacket { packet_id: 1 }));
        let big = r#"<PacketSpecification PacketIDLength="1"><Packet ID="256" description="a"/></PacketSpecification>"#;
        assert!(matches!(parse_packet_spec(big, &net()), Err(SpecError::PacketIdOverflow { packet_id: 256, .. })));
        let zero = r#"<PacketSpecification PacketIDLength="0"/>"#;
        assert_eq!(parse_packet_spec(zero, &net()), Err(SpecError::InvalidPacketIdLength(0)));
    }

    #[test]
    fn strict_field_attributes() {
        let bad_type = single(r#"<Field ID="0" type="Edge">A</Field>"#);
        assert!(parse_packet_spec(&bad_type, &net()).unwrap_err().to_string().contains("Edge"));
        let extra = single(r#"<Field ID="0" type="Node" unit="C">A</Field>"#);
        assert!(parse_packet_spec(&extra, &net()).unwrap_err().to_string().contains("unit"));
        let unnamed = single(r#"<Field ID="0" type="Node"></Field>"#);
        assert!(matches!(parse_packet_spec(&unnamed, &net()), Err(SpecError::EmptyFieldName { .. })));
    }

    #[test]
    fn reserialized_spec_reparses_identically() {
        let net = net();
        let pkts = parse_packet_spec(PACKET_XML, &net).unwrap();
        assert_eq!(parse_packet_spec(&pkts.to_xml(), &net).unwrap(), pkts);
        let empty = parse_packet_spec(r#"<PacketSpecification PacketIDLength="3"/>"#, &net).unwrap();
        assert_eq!(parse_packet_spec(&empty.to_xml(), &net).unwrap(), empty);
    }
}
