//! Strict-mode helpers over `roxmltree` shared by the three XML dialects.

use roxmltree::{Document, Node};

use super::SpecError;

pub(crate) fn position(node: Node<'_, '_>) -> String {
    let pos = node.document().text_pos_at(node.range().start);
    format!("line {}:{}", pos.row, pos.col)
}

pub(crate) fn describe(node: Node<'_, '_>) -> String {
    format!("<{}> at {}", node.tag_name().name(), position(node))
}

pub(crate) fn parse_document(text: &str) -> Result<Document<'_>, SpecError> {
    Document::parse(text).map_err(|e| SpecError::MalformedXml(e.to_string()))
}

/// Rejects any attribute not listed in `allowed`.
pub(crate) fn check_attributes(node: Node<'_, '_>, allowed: &[&str]) -> Result<(), SpecError> {
    for attr in node.attributes() {
        if attr.namespace().is_some() || !allowed.contains(&attr.name()) {
            return Err(SpecError::Schema {
                location: describe(node),
                message: format!("unknown attribute {:?}", attr.name()),
            });
        }
    }
    Ok(())
}

pub(crate) fn expect_name(node: Node<'_, '_>, name: &str) -> Result<(), SpecError> {
    if node.tag_name().name() != name || node.tag_name().namespace().is_some() {
        return Err(SpecError::Schema { location: describe(node), message: format!("expected <{name}>") });
    }
    Ok(())
}

/// Element children of `node`; whitespace-only text, comments and processing
/// instructions are skipped, anything else is an error.
pub(crate) fn element_children<'a, 'input>(node: Node<'a, 'input>) -> Result<Vec<Node<'a, 'input>>, SpecError> {
    let mut out = Vec::new();
    for child in node.children() {
        if child.is_element() {
            out.push(child);
        } else if child.is_text() && !child.text().unwrap_or("").trim().is_empty() {
            return Err(SpecError::Schema { location: describe(node), message: "unexpected text content".into() });
        }
    }
    Ok(out)
}

/// Text content of a leaf element, trimmed. Child elements are rejected.
pub(crate) fn leaf_text(node: Node<'_, '_>) -> Result<String, SpecError> {
    let mut text = String::new();
    for child in node.children() {
        if child.is_element() {
            return Err(SpecError::Schema {
                location: describe(node),
                message: format!("unexpected child element <{}>", child.tag_name().name()),
            });
        }
        if child.is_text() {
            text.push_str(child.text().unwrap_or(""));
        }
    }
    Ok(text.trim().to_string())
}

pub(crate) fn required_attr<'a>(node: Node<'a, '_>, name: &str) -> Result<&'a str, SpecError> {
    node.attribute(name)
        .ok_or_else(|| SpecError::Schema { location: describe(node), message: format!("missing attribute {name:?}") })
}

/// Parses a decimal unsigned integer attribute.
pub(crate) fn uint_attr(node: Node<'_, '_>, name: &str) -> Result<u64, SpecError> {
    let raw = required_attr(node, name)?;
    let trimmed = raw.trim();
    if trimmed.is_empty() || !trimmed.bytes().all(|b| b.is_ascii_digit()) {
        return Err(SpecError::Schema {
            location: describe(node),
            message: format!("attribute {name}={raw:?} is not a decimal unsigned integer"),
        });
    }
    trimmed.parse().map_err(|_| SpecError::Schema {
        location: describe(node),
        message: format!("attribute {name}={raw:?} is out of range"),
    })
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}
