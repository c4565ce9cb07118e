//! Parse a checkpoint document, inspect it, and write it back.

use nviz::checkpoint::{parse_checkpoint, serialize_checkpoint};
use nviz::spec::Specs;

fn main() {
    let specs = Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml"))
        .expect("bundled specs are valid");
    let text = include_str!("../testdata/checkpoint.xml");
    let cp = parse_checkpoint(text, &specs).expect("bundled checkpoint parses");

    println!(
        "checkpoint t={}: {} nodes, {} links, {} logs",
        cp.t,
        cp.state.nodes.len(),
        cp.state.link_count(),
        cp.logs.len()
    );
    for node in cp.state.nodes.values() {
        let dests: Vec<_> = node.links.keys().collect();
        println!("  node {} props {:?} links to {:?}", node.address, node.raw_props, dests);
    }
    println!("  env {:?}", cp.state.env.raw_props);

    let written = serialize_checkpoint(&cp);
    println!("re-serialized identically: {}", written.trim_end() == text.trim_end());
    print!("{written}");
}
