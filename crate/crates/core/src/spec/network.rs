use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::convert::{parse_expr, ConversionExpr};

use super::xml::{
    check_attributes, element_children, escape, expect_name, leaf_text, parse_document, required_attr, uint_attr,
};
use super::{capacity, PropertyKind, SpecError, ADDRESS_PROPERTY_ID, MAX_FIELD_BYTES};

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub kind: PropertyKind,
    pub id: u32,
    pub name: String,
    pub length: u8,
    pub min: u64,
    pub max: u64,
    pub convert: ConversionExpr,
    /// The `convert` attribute as written.
    pub convert_text: String,
}

impl Property {
    pub fn contains(&self, raw: u64) -> bool {
        (self.min..=self.max).contains(&raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    log_per_checkpoint: u32,
    properties: [Vec<Property>; 3],
    /// Per kind, indices into `properties` such that every property comes
    /// after the properties its expression depends on.
    eval_order: [Vec<usize>; 3],
    warnings: Vec<String>,
}

impl NetworkSpec {
    pub fn log_per_checkpoint(&self) -> u32 {
        self.log_per_checkpoint
    }

    /// Properties of one kind in document order.
    pub fn properties(&self, kind: PropertyKind) -> &[Property] {
        &self.properties[kind.index()]
    }

    pub fn lookup(&self, kind: PropertyKind, id: u32) -> Option<&Property> {
        self.properties(kind).iter().find(|p| p.id == id)
    }

    pub fn lookup_by_name(&self, kind: PropertyKind, name: &str) -> Option<&Property> {
        self.properties(kind).iter().find(|p| p.name == name)
    }

    /// Properties of one kind in dependency order.
    pub fn conversion_order(&self, kind: PropertyKind) -> impl Iterator<Item = &Property> + '_ {
        self.eval_order[kind.index()].iter().map(move |&i| &self.properties[kind.index()][i])
    }

    pub fn address_property(&self) -> Option<&Property> {
        self.lookup(PropertyKind::Node, ADDRESS_PROPERTY_ID)
    }

    /// Non-fatal findings, e.g. a missing Node property 0.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "<NetworkSpecification LogPerCheckpoint=\"{}\">", self.log_per_checkpoint);
        for kind in PropertyKind::ALL {
            let props = self.properties(kind);
            if props.is_empty() {
                continue;
            }
            let _ = writeln!(out, "  <{}>", kind.container_element());
            for p in props {
                let _ = writeln!(
                    out,
                    "    <Property ID=\"{}\" convert=\"{}\" length=\"{}\" max=\"{}\" min=\"{}\">{}</Property>",
                    p.id,
                    escape(&p.convert_text),
                    p.length,
                    p.max,
                    p.min,
                    escape(&p.name)
                );
            }
            let _ = writeln!(out, "  </{}>", kind.container_element());
        }
        out.push_str("</NetworkSpecification>\n");
        out
    }
}

pub fn lookup_property(net: &NetworkSpec, kind: PropertyKind, id: u32) -> Option<&Property> {
    net.lookup(kind, id)
}

pub fn parse_network_spec(xml_text: &str) -> Result<NetworkSpec, SpecError> {
    let doc = parse_document(xml_text)?;
    let root = doc.root_element();
    expect_name(root, "NetworkSpecification")?;
    check_attributes(root, &["LogPerCheckpoint"])?;
    let lpc = uint_attr(root, "LogPerCheckpoint")?;
    if lpc == 0 {
        return Err(SpecError::InvalidLogPerCheckpoint);
    }
    let log_per_checkpoint = u32::try_from(lpc).map_err(|_| SpecError::Schema {
        location: super::xml::describe(root),
        message: format!("LogPerCheckpoint {lpc} is too large"),
    })?;

    let mut properties: [Vec<Property>; 3] = Default::default();
    let mut seen_container = [false; 3];
    for container in element_children(root)? {
        let kind = PropertyKind::ALL
            .into_iter()
            .find(|k| {
                container.tag_name().name() == k.container_element() && container.tag_name().namespace().is_none()
            })
            .ok_or_else(|| SpecError::Schema {
                location: super::xml::describe(container),
                message: "unknown element (expected NodeProperties, LinkProperties or EnvrProperties)".into(),
            })?;
        if std::mem::replace(&mut seen_container[kind.index()], true) {
            return Err(SpecError::Schema {
                location: super::xml::describe(container),
                message: "container appears more than once".into(),
            });
        }
        check_attributes(container, &[])?;
        for node in element_children(container)? {
            expect_name(node, "Property")?;
            check_attributes(node, &["ID", "convert", "length", "max", "min"])?;
            let property = parse_property(node, kind)?;
            if properties[kind.index()].iter().any(|p| p.id == property.id) {
                return Err(SpecError::DuplicateProperty { kind, id: property.id });
            }
            if properties[kind.index()].iter().any(|p| p.name == property.name) {
                return Err(SpecError::DuplicateName { kind, id: property.id, name: property.name });
            }
            properties[kind.index()].push(property);
        }
    }

    let mut eval_order: [Vec<usize>; 3] = Default::default();
    for kind in PropertyKind::ALL {
        eval_order[kind.index()] = dependency_order(kind, &properties[kind.index()])?;
    }

    let mut warnings = Vec::new();
    if !properties[PropertyKind::Node.index()].iter().any(|p| p.id == ADDRESS_PROPERTY_ID) {
        warnings.push("no Node property with ID 0: packets cannot identify nodes".to_string());
    }

    Ok(NetworkSpec { log_per_checkpoint, properties, eval_order, warnings })
}

fn parse_property(node: roxmltree::Node<'_, '_>, kind: PropertyKind) -> Result<Property, SpecError> {
    let raw_id = uint_attr(node, "ID")?;
    let id = u32::try_from(raw_id).map_err(|_| SpecError::Schema {
        location: super::xml::describe(node),
        message: format!("ID {raw_id} is too large"),
    })?;
    let raw_length = uint_attr(node, "length")?;
    if raw_length == 0 || raw_length > u64::from(MAX_FIELD_BYTES) {
        return Err(SpecError::InvalidLength { kind, id, length: raw_length });
    }
    let length = raw_length as u8;
    let min = uint_attr(node, "min")?;
    let max = uint_attr(node, "max")?;
    if min > max {
        return Err(SpecError::RangeInverted { kind, id, min, max });
    }
    let cap = capacity(length);
    if max > cap {
        return Err(SpecError::ExceedsLength { kind, id, max, length, capacity: cap });
    }
    let convert_text = required_attr(node, "convert")?.to_string();
    let convert = parse_expr(&convert_text).map_err(|error| SpecError::BadExpression { kind, id, error })?;
    let name = leaf_text(node)?;
    if name.is_empty() {
        return Err(SpecError::EmptyName { kind, id });
    }
    Ok(Property { kind, id, name, length, min, max, convert, convert_text })
}

/// Stable topological order (document order breaks ties).
fn dependency_order(kind: PropertyKind, props: &[Property]) -> Result<Vec<usize>, SpecError> {
    let by_name: HashMap<&str, usize> = props.iter().enumerate().map(|(i, p)| (p.name.as_str(), i)).collect();
    let mut indegree = vec![0usize; props.len()];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); props.len()];
    for (i, p) in props.iter().enumerate() {
        for name in p.convert.dependencies() {
            let &dep = by_name.get(name.as_str()).ok_or_else(|| SpecError::UnknownDependent {
                kind,
                id: p.id,
                name: name.clone(),
            })?;
            indegree[i] += 1;
            dependents[dep].push(i);
        }
    }
    // Ready set keyed by document position so ties resolve deterministically.
    let mut ready: BTreeMap<usize, ()> =
        indegree.iter().enumerate().filter(|(_, d)| **d == 0).map(|(i, _)| (i, ())).collect();
    let mut order = Vec::with_capacity(props.len());
    while let Some((i, ())) = ready.pop_first() {
        order.push(i);
        for &j in &dependents[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.insert(j, ());
            }
        }
    }
    if order.len() != props.len() {
        let names = indegree.iter().enumerate().filter(|(_, d)| **d > 0).map(|(i, _)| props[i].name.clone()).collect();
        return Err(SpecError::DependencyCycle { kind, names });
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NETWORK_XML: &str = include_str!("../../testdata/network.xml");

    #[test]
    fn golden_network_spec() {
        let net = parse_network_spec(NETWORK_XML).unwrap();
        assert_eq!(net.log_per_checkpoint(), 100);
        assert_eq!(net.properties(PropertyKind::Node).len(), 4);
        assert_eq!(net.properties(PropertyKind::Link).len(), 1);
        assert_eq!(net.properties(PropertyKind::Envr).len(), 2);
        assert!(net.warnings().is_empty());
        let names: Vec<_> = net.properties(PropertyKind::Node).iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["Address", "Function", "Temperature", "Vref"]);
    }

    #[test]
    fn lookup_examples() {
        let net = parse_network_spec(NETWORK_XML).unwrap();
        let temp = lookup_property(&net, PropertyKind::Node, 2).unwrap();
        assert_eq!(temp.name, "Temperature");
        assert_eq!(temp.length, 2);
        assert_eq!(temp.convert_text, "x*122.3/[Vref]");
        assert_eq!(lookup_property(&net, PropertyKind::Link, 1).unwrap().name, "Strength");
        assert!(lookup_property(&net, PropertyKind::Envr, 7).is_none());
    }

    #[test]
    fn vref_converts_before_temperature() {
        let net = parse_network_spec(NETWORK_XML).unwrap();
        let order: Vec<_> = net.conversion_order(PropertyKind::Node).map(|p| p.id).collect();
        let pos = |id| order.iter().position(|&x| x == id).unwrap();
        assert!(pos(3) < pos(2));
        assert_eq!(order.len(), 4);
    }

    #[test]
    fn unknown_dependent_is_rejected() {
        let text = NETWORK_XML.replace("x*122.3/[Vref]", "x*122.3/[Humidity]");
        assert_eq!(
            parse_network_spec(&text),
            Err(SpecError::UnknownDependent { kind: PropertyKind::Node, id: 2, name: "Humidity".into() })
        );
    }

    #[test]
    fn max_beyond_length_capacity() {
        let text = NETWORK_XML.replace(r#"max="4" min="1""#, r#"max="300" min="1""#);
        assert!(matches!(
            parse_network_spec(&text),
            Err(SpecError::ExceedsLength { kind: PropertyKind::Node, id: 1, max: 300, capacity: 255, .. })
        ));
    }

    #[test]
    fn structural_errors() {
        let cases = [
            ("<NetworkSpecification LogPerCheckpoint=\"0\"/>", "LogPerCheckpoint"),
            ("<NetworkSpecification/>", "missing attribute"),
            ("<NetworkSpecification LogPerCheckpoint=\"-1\"/>", "decimal unsigned"),
            ("<NetworkSpecification LogPerCheckpoint=\"1\" extra=\"1\"/>", "unknown attribute"),
            ("<NetworkSpecification LogPerCheckpoint=\"1\"><Bogus/></NetworkSpecification>", "unknown element"),
            ("<Network LogPerCheckpoint=\"1\"/>", "expected <NetworkSpecification>"),
            ("<NetworkSpecification LogPerCheckpoint=\"1\">", "malformed"),
            ("<NetworkSpecification LogPerCheckpoint=\"1\">hello</NetworkSpecification>", "text"),
        ];
        for (text, needle) in cases {
            let err = parse_network_spec(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    fn one_node(attrs: &str, name: &str) -> String {
        format!(
            "<NetworkSpecification LogPerCheckpoint=\"1\"><NodeProperties>\
             <Property ID=\"0\" convert=\"x\" length=\"1\" max=\"9\" min=\"0\">Address</Property>\
             <Property {attrs}>{name}</Property></NodeProperties></NetworkSpecification>"
        )
    }

    #[test]
    fn property_level_errors() {
        let dup = one_node(r#"ID="0" convert="x" length="1" max="1" min="0""#, "Other");
        assert_eq!(parse_network_spec(&dup), Err(SpecError::DuplicateProperty { kind: PropertyKind::Node, id: 0 }));
        let dup_name = one_node(r#"ID="1" convert="x" length="1" max="1" min="0""#, "Address");
        assert!(matches!(parse_network_spec(&dup_name), Err(SpecError::DuplicateName { .. })));
        let inverted = one_node(r#"ID="1" convert="x" length="1" max="1" min="2""#, "P");
        assert!(matches!(parse_network_spec(&inverted), Err(SpecError::RangeInverted { min: 2, max: 1, .. })));
        let bad_expr = one_node(r#"ID="1" convert="x*(" length="1" max="1" min="0""#, "P");
        assert!(matches!(parse_network_spec(&bad_expr), Err(SpecError::BadExpression { id: 1, .. })));
        let zero_len = one_node(r#"ID="1" convert="x" length="0" max="0" min="0""#, "P");
        assert!(matches!(parse_network_spec(&zero_len), Err(SpecError::InvalidLength { length: 0, .. })));
        let wide = one_node(r#"ID="1" convert="x" length="9" max="0" min="0""#, "P");
        assert!(matches!(parse_network_spec(&wide), Err(SpecError::InvalidLength { length: 9, .. })));
        let unnamed = one_node(r#"ID="1" convert="x" length="1" max="0" min="0""#, " ");
        assert!(matches!(parse_network_spec(&unnamed), Err(SpecError::EmptyName { id: 1, .. })));
        let missing_convert = one_node(r#"ID="1" length="1" max="0" min="0""#, "P");
        assert!(parse_network_spec(&missing_convert).unwrap_err().to_string().contains("convert"));
    }

    #[test]
    fn self_and_mutual_cycles() {
        let selfref = one_node(r#"ID="1" convert="x+[P]" length="1" max="1" min="0""#, "P");
        assert!(matches!(parse_network_spec(&selfref), Err(SpecError::DependencyCycle { .. })));
        let text = "<NetworkSpecification LogPerCheckpoint=\"1\"><EnvrProperties>\
            <Property ID=\"1\" convert=\"[B]\" length=\"1\" max=\"1\" min=\"0\">A</Property>\
            <Property ID=\"2\" convert=\"[A]\" length=\"1\" max=\"1\" min=\"0\">B</Property>\
            <Property ID=\"3\" convert=\"x\" length=\"1\" max=\"1\" min=\"0\">C</Property>\
            </EnvrProperties></NetworkSpecification>";
        match parse_network_spec(text) {
            Err(SpecError::DependencyCycle { kind, names }) => {
                assert_eq!(kind, PropertyKind::Envr);
                assert_eq!(names, ["A", "B"]);
            }
            other => panic!("expected cycle, got {other:?}"),
        }
    }

    #[test]
    fn cross_kind_reference_is_unknown() {
        let text = "<NetworkSpecification LogPerCheckpoint=\"1\">\
            <NodeProperties><Property ID=\"0\" convert=\"x\" length=\"1\" max=\"1\" min=\"0\">Address</Property></NodeProperties>\
            <LinkProperties><Property ID=\"1\" convert=\"x/[Address]\" length=\"1\" max=\"1\" min=\"0\">Q</Property></LinkProperties>\
            </NetworkSpecification>";
        assert!(matches!(parse_network_spec(text), Err(SpecError::UnknownDependent { kind: PropertyKind::Link, .. })));
    }

    #[test]
    fn missing_address_property_only_warns() {
        let text = "<NetworkSpecification LogPerCheckpoint=\"5\"><EnvrProperties>\
            <Property ID=\"1\" convert=\"x\" length=\"1\" max=\"1\" min=\"0\">A</Property>\
            </EnvrProperties></NetworkSpecification>";
        let net = parse_network_spec(text).unwrap();
        assert_eq!(net.warnings().len(), 1);
    }

    #[test]
    fn ids_need_not_be_contiguous() {
        let text = one_node(r#"ID="17" convert="x" length="1" max="1" min="0""#, "Sparse");
        let net = parse_network_spec(&text).unwrap();
        assert_eq!(net.lookup(PropertyKind::Node, 17).unwrap().name, "Sparse");
    }

    #[test]
    fn reserialized_spec_reparses_identically() {
        let net = parse_network_spec(NETWORK_XML).unwrap();
        assert_eq!(parse_network_spec(&net.to_xml()).unwrap(), net);
    }

    #[test]
    fn comments_and_declaration_are_tolerated() {
        let text = format!("<?xml version=\"1.0\"?>\n<!-- example -->\n{NETWORK_XML}");
        assert!(parse_network_spec(&text).is_ok());
    }
}
