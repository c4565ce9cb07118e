//! Load a network and packet spec pair and print what they define.
//!
//! cargo run --example validate_specs [-- NET.xml PKT.xml]

use std::path::PathBuf;

use nviz::spec::{PropertyKind, Specs};

fn main() {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata");
    let mut args = std::env::args().skip(1);
    let net = args.next().map(PathBuf::from).unwrap_or_else(|| data.join("network.xml"));
    let pkt = args.next().map(PathBuf::from).unwrap_or_else(|| data.join("packets.xml"));

    let specs = match Specs::load(&net, &pkt) {
        Ok(specs) => specs,
        Err(e) => {
            eprintln!("invalid specs: {e}");
            std::process::exit(1);
        }
    };
    for warning in specs.network.warnings() {
        eprintln!("warning: {warning}");
    }
    println!("LogPerCheckpoint = {}", specs.network.log_per_checkpoint());
    for kind in PropertyKind::ALL {
        for p in specs.network.properties(kind) {
            println!(
                "{kind:<4} {:>2} {:<12} {} byte(s) [{}, {}] convert {}",
                p.id, p.name, p.length, p.min, p.max, p.convert
            );
        }
    }
    for format in specs.packets.packets() {
        let fields: Vec<_> = format.fields.iter().map(|f| format!("{}({})", f.name, f.length)).collect();
        println!(
            "packet {} {:?}: {} bytes = id({}) + {}",
            format.packet_id,
            format.description,
            format.total_length(),
            format.id_length(),
            fields.join(" + ")
        );
    }
}
