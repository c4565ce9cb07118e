//! Binary packet decoding and encoding.
//!
//! A packet is its ID (`PacketIDLength` bytes) followed by each field of its
//! format in declared order, every integer big-endian unsigned. The whole
//! buffer must be consumed and each field must sit inside its property's
//! `[min, max]`; anything else is a bad packet.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::spec::{capacity, Field, NetworkSpec, PacketFormat, PacketSpec};

/// Milliseconds since the Unix epoch.
pub type EpochMillis = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPacket {
    pub bytes: Vec<u8>,
    pub received_at: EpochMillis,
}

impl RawPacket {
    pub fn new(bytes: Vec<u8>, received_at: EpochMillis) -> Self {
        RawPacket { bytes, received_at }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPacket {
    pub format: Arc<PacketFormat>,
    /// Raw field values, parallel to `format.fields`.
    pub values: Vec<u64>,
    pub received_at: EpochMillis,
}

impl ParsedPacket {
    pub fn packet_id(&self) -> u64 {
        self.format.packet_id
    }

    pub fn fields(&self) -> impl Iterator<Item = (&Field, u64)> + '_ {
        self.format.fields.iter().zip(self.values.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("packet too short: {actual} byte(s), need at least {expected}")]
    TooShort { expected: usize, actual: usize },
    #[error("unknown packet type {0}")]
    UnknownPacketType(u64),
    #[error("length mismatch: expected {expected} byte(s), got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("field {field} = {value} outside [{min}, {max}]")]
    RangeViolation { field: String, value: u64, min: u64, max: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("expected {expected} value(s) for packet {packet_id}, got {actual}")]
    FieldCount { packet_id: u64, expected: usize, actual: usize },
    #[error("field {field} = {value} does not fit in {length} byte(s)")]
    ValueTooLarge { field: String, value: u64, length: u8 },
    #[error("packet ID {packet_id} does not fit in {length} byte(s)")]
    PacketIdTooLarge { packet_id: u64, length: u8 },
}

fn read_be(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| (acc << 8) | u64::from(b))
}

fn write_be(out: &mut Vec<u8>, value: u64, length: u8) {
    for i in (0..length).rev() {
        out.push((value >> (8 * u32::from(i))) as u8);
    }
}

pub fn decode_packet(raw: &RawPacket, net: &NetworkSpec, pkts: &PacketSpec) -> Result<ParsedPacket, DecodeError> {
    let bytes = &raw.bytes;
    let id_len = usize::from(pkts.packet_id_length());
    if bytes.len() < id_len {
        return Err(DecodeError::TooShort { expected: id_len, actual: bytes.len() });
    }
    let packet_id = read_be(&bytes[..id_len]);
    let format = pkts.get(packet_id).ok_or(DecodeError::UnknownPacketType(packet_id))?;
    if bytes.len() != format.total_length() {
        return Err(DecodeError::LengthMismatch { expected: format.total_length(), actual: bytes.len() });
    }

    let mut offset = id_len;
    let mut values = Vec::with_capacity(format.fields.len());
    for field in &format.fields {
        let end = offset + usize::from(field.length);
        let value = read_be(&bytes[offset..end]);
        offset = end;
        let property = net
            .lookup(field.kind, field.property_id)
            .expect("packet spec fields are resolved against the network spec");
        if !property.contains(value) {
            return Err(DecodeError::RangeViolation {
                field: field.name.clone(),
                value,
                min: property.min,
                max: property.max,
            });
        }
        values.push(value);
    }
    Ok(ParsedPacket { format: Arc::clone(format), values, received_at: raw.received_at })
}

pub fn encode_packet(packet: &ParsedPacket) -> Result<Vec<u8>, EncodeError> {
    let format = &packet.format;
    if packet.values.len() != format.fields.len() {
        return Err(EncodeError::FieldCount {
            packet_id: format.packet_id,
            expected: format.fields.len(),
            actual: packet.values.len(),
        });
    }
    if format.packet_id > capacity(format.id_length()) {
        return Err(EncodeError::PacketIdTooLarge { packet_id: format.packet_id, length: format.id_length() });
    }
    let mut out = Vec::with_capacity(format.total_length());
    write_be(&mut out, format.packet_id, format.id_length());
    for (field, value) in packet.fields() {
        if value > capacity(field.length) {
            return Err(EncodeError::ValueTooLarge { field: field.name.clone(), value, length: field.length });
        }
        write_be(&mut out, value, field.length);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexLogError {
    #[error("empty token at position {index}")]
    EmptyToken { index: usize },
    #[error("token {token:?} at position {index} is not hexadecimal")]
    NonHex { index: usize, token: String },
    #[error("token {token:?} at position {index} exceeds 0xFF")]
    TooLarge { index: usize, token: String },
    #[error("missing trailing '|'")]
    MissingTrailingPipe,
}

/// Parses the pipe-separated log form, e.g. `0|2|0|3|1|6F|0|7B|`.
pub fn parse_hex_log(text: &str) -> Result<Vec<u8>, HexLogError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('|').ok_or(HexLogError::MissingTrailingPipe)?;
    body.split('|')
        .enumerate()
        .map(|(index, token)| {
            if token.is_empty() {
                return Err(HexLogError::EmptyToken { index });
            }
            if !token.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(HexLogError::NonHex { index, token: token.to_string() });
            }
            if token.len() > 2 {
                return Err(HexLogError::TooLarge { index, token: token.to_string() });
            }
            Ok(u8::from_str_radix(token, 16).expect("validated hex byte"))
        })
        .collect()
}

/// Uppercase hex without leading zeros, each byte followed by `|`.
pub fn format_hex_log(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 3);
    for b in bytes {
        let _ = write!(out, "{b:X}|");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Specs;

    fn specs() -> Specs {
        Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml")).unwrap()
    }

    fn decode(bytes: &[u8]) -> Result<ParsedPacket, DecodeError> {
        let s = specs();
        decode_packet(&RawPacket::new(bytes.to_vec(), 7), &s.network, &s.packets)
    }

    #[test]
    fn update_temperature() {
        let p = decode(&[0x00, 0x02, 0x00, 0x03, 0x01, 0x6F, 0x00, 0x7B]).unwrap();
        assert_eq!(p.packet_id(), 2);
        assert_eq!(p.format.description, "UpdateTemperature");
        let named: Vec<_> = p.fields().map(|(f, v)| (f.name.as_str(), v)).collect();
        assert_eq!(named, [("NodeAddress", 3), ("VRef", 367), ("Temperature", 123)]);
        assert_eq!(p.received_at, 7);
    }

    #[test]
    fn associate() {
        let p = decode(&[0x00, 0x01, 0x00, 0x02, 0x00, 0x07, 0x91, 0x03]).unwrap();
        assert_eq!(p.format.description, "Associate");
        assert_eq!(p.values, [2, 7, 145, 3]);
    }

    #[test]
    fn bad_packets() {
        assert_eq!(decode(&[0x00, 0x05, 0x01]), Err(DecodeError::UnknownPacketType(5)));
        assert_eq!(
            decode(&[0x00, 0x01, 0x00, 0x02, 0x00, 0x07, 0x91, 0x05]),
            Err(DecodeError::RangeViolation { field: "NodeFunction".into(), value: 5, min: 1, max: 4 })
        );
        assert_eq!(decode(&[0x00]), Err(DecodeError::TooShort { expected: 2, actual: 1 }));
        assert_eq!(decode(&[]), Err(DecodeError::TooShort { expected: 2, actual: 0 }));
        assert_eq!(
            decode(&[0x00, 0x03, 0x00, 0x01, 0x01, 0xFF]),
            Err(DecodeError::LengthMismatch { expected: 5, actual: 6 })
        );
        assert_eq!(decode(&[0x00, 0x03, 0x00]), Err(DecodeError::LengthMismatch { expected: 5, actual: 3 }));
    }

    #[test]
    fn little_endian_reading_would_violate_vref_range() {
        // 01 6F read little-endian is 28417, far beyond Vref's max of 1023.
        assert_eq!(u16::from_le_bytes([0x01, 0x6F]), 28417);
        assert_eq!(read_be(&[0x01, 0x6F]), 367);
    }

    #[test]
    fn encode_examples() {
        let p = decode(&[0x00, 0x02, 0x00, 0x03, 0x01, 0x6F, 0x00, 0x7B]).unwrap();
        assert_eq!(encode_packet(&p).unwrap(), [0x00, 0x02, 0x00, 0x03, 0x01, 0x6F, 0x00, 0x7B]);

        let s = specs();
        let assoc =
            ParsedPacket { format: s.packets.get(1).unwrap().clone(), values: vec![0, 0, 1, 1], received_at: 0 };
        assert_eq!(encode_packet(&assoc).unwrap(), [0, 1, 0, 0, 0, 0, 1, 1]);

        let mut hot = p.clone();
        hot.values[2] = 70_000;
        assert!(matches!(encode_packet(&hot), Err(EncodeError::ValueTooLarge { value: 70_000, length: 2, .. })));
        hot.values.pop();
        assert!(matches!(encode_packet(&hot), Err(EncodeError::FieldCount { .. })));
    }

    #[test]
    fn hex_log_examples() {
        assert_eq!(parse_hex_log("0|2|0|3|1|6F|0|7B|").unwrap(), [0x00, 0x02, 0x00, 0x03, 0x01, 0x6F, 0x00, 0x7B]);
        assert_eq!(format_hex_log(&[0x00, 0x01]), "0|1|");
        assert_eq!(format_hex_log(&[0x00, 0x02, 0x00, 0x03, 0x01, 0x6F, 0x00, 0x7B]), "0|2|0|3|1|6F|0|7B|");
        assert_eq!(parse_hex_log("0a|Ff|").unwrap(), [0x0A, 0xFF]);
        assert_eq!(parse_hex_log("").unwrap(), Vec::<u8>::new());
        assert!(matches!(parse_hex_log("0|GG|"), Err(HexLogError::NonHex { index: 1, .. })));
        assert!(matches!(parse_hex_log("0||"), Err(HexLogError::EmptyToken { index: 1 })));
        assert!(matches!(parse_hex_log("100|"), Err(HexLogError::TooLarge { .. })));
        assert_eq!(parse_hex_log("0|1"), Err(HexLogError::MissingTrailingPipe));
        assert!(parse_hex_log("|").is_err());
        assert!(parse_hex_log("+1|").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn hex_log_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
                prop_assert_eq!(parse_hex_log(&format_hex_log(&bytes)).unwrap(), bytes);
            }

            #[test]
            fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..16)) {
                let _ = decode(&bytes);
            }
        }
    }
}
