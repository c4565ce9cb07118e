//! Convert raw readings to engineering units with the spec's expressions,
//! and evaluate ad-hoc expressions.

use nviz::checkpoint::parse_checkpoint;
use nviz::convert::{ConversionExpr, EvalEnv};
use nviz::model::converted_view;
use nviz::spec::Specs;

fn main() {
    let specs = Specs::parse(include_str!("../testdata/network.xml"), include_str!("../testdata/packets.xml"))
        .expect("bundled specs are valid");
    let cp = parse_checkpoint(include_str!("../testdata/checkpoint.xml"), &specs).expect("bundled checkpoint parses");

    for node in converted_view(&cp.state, &specs.network).nodes {
        let values: Vec<_> = node
            .properties
            .iter()
            .map(|p| match p.value {
                Some(v) => format!("{}={v:.3} (raw {})", p.name, p.raw),
                None => format!("{}=? (raw {})", p.name, p.raw),
            })
            .collect();
        println!("node {}: {}", node.address, values.join(", "));
    }

    let expr: ConversionExpr = "(x - [Offset]) * 0.5 / [Gain]".parse().expect("valid expression");
    println!("{expr} depends on {:?}", expr.dependencies());
    let env: EvalEnv = [("Offset", 20), ("Gain", 4)].into_iter().collect();
    println!("x=100 -> {:?}", expr.eval(100, &env));
    println!("x=100, no Gain -> {:?}", expr.eval(100, &[("Offset", 20)].into_iter().collect()));
    match "x*(1.5".parse::<ConversionExpr>() {
        Ok(_) => unreachable!(),
        Err(e) => println!("\"x*(1.5\" -> {e}"),
    }
}
