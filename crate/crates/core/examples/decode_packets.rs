//! Decode pipe-hex packets, show the rejected ones, and encode a packet back.

use std::sync::Arc;

use nviz::codec::{decode_packet, encode_packet, format_hex_log, parse_hex_log, ParsedPacket, RawPacket};
use nviz::spec::Specs;

fn main() {
    let specs = Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml"))
        .expect("bundled specs are valid");

    for hex in ["0|2|0|3|1|6F|0|7B|", "0|1|0|2|0|7|91|3|", "0|1|0|2|0|7|91|5|", "0|9|", "0|3|0|1|"] {
        let raw = RawPacket::new(parse_hex_log(hex).expect("well-formed hex"), 0);
        match decode_packet(&raw, &specs.network, &specs.packets) {
            Ok(p) => {
                let fields: Vec<_> = p.fields().map(|(f, v)| format!("{}={v}", f.name)).collect();
                println!("{hex:<22} -> {} {}", p.format.description, fields.join(" "));
            }
            Err(e) => println!("{hex:<22} -> rejected: {e}"),
        }
    }

    let format = Arc::clone(specs.packets.get(4).expect("packet 4 exists"));
    let packet = ParsedPacket { format, values: vec![26, 0x1234], received_at: 0 };
    let bytes = encode_packet(&packet).expect("values fit");
    println!("encoded {} -> {}", packet.format.description, format_hex_log(&bytes));
}
