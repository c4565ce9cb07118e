#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use nviz::codec::{decode_packet, RawPacket};
use nviz::model::NetworkState;
use nviz::spec::Specs;

pub fn testdata(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("testdata").join(name)
}

pub fn network_xml() -> String {
    std::fs::read_to_string(testdata("network.xml")).unwrap()
}

pub fn packet_xml() -> String {
    std::fs::read_to_string(testdata("packets.xml")).unwrap()
}

pub fn checkpoint_xml() -> String {
    std::fs::read_to_string(testdata("checkpoint.xml")).unwrap()
}

pub fn specs() -> Arc<Specs> {
    Arc::new(Specs::parse(&network_xml(), &packet_xml()).unwrap())
}

/// The ten logs of the sample checkpoint, as (t, pipe-hex).
pub const SAMPLE_LOGS: [(u64, &str); 10] = [
    (1328163457311, "0|2|0|3|1|6F|0|7B|"),
    (1328163469215, "0|2|0|4|1|65|0|70|"),
    (1328163488303, "0|2|0|5|1|92|0|84|"),
    (1328163509031, "0|2|0|6|1|86|0|79|"),
    (1328163529150, "0|1|0|2|0|7|91|3|"),
    (1328163551462, "0|2|0|7|1|9C|0|80|"),
    (1328163580910, "0|2|0|0|1|77|0|68|"),
    (1328163603094, "0|2|0|1|1|62|0|66|"),
    (1328163625542, "0|2|0|3|1|6D|0|79|"),
    (1328163646006, "0|2|0|4|1|63|0|71|"),
];

/// Reference fold: decode and apply every packet with `t <= tau`, in order,
/// to an empty state. Undecodable packets are skipped.
pub fn brute_force_state(packets: &[RawPacket], tau: u64, specs: &Specs) -> NetworkState {
    let mut state = NetworkState::new();
    for raw in packets.iter().filter(|p| p.received_at <= tau) {
        if let Ok(p) = decode_packet(raw, &specs.network, &specs.packets) {
            let _ = state.apply_packet(&p);
        }
    }
    state
}

/// Expression oracle: a separate AST, renderer and tree-walking evaluator.
/// The library only ever sees the rendered text.
pub mod oracle {
    use rand::Rng;

    pub const DEPENDENTS: [&str; 3] = ["Vref", "Gain", "Offset"];

    #[derive(Debug, Clone)]
    pub enum T {
        Lit(f64),
        X,
        Dep(usize),
        Neg(Box<T>),
        Op(char, Box<T>, Box<T>),
    }

    pub fn random_tree(rng: &mut impl Rng, depth: u32) -> T {
        if depth == 0 || rng.random_bool(0.25) {
            return match rng.random_range(0..3) {
                0 => T::Lit((rng.random_range(-1000.0..=1000.0f64) * 1000.0).round() / 1000.0),
                1 => T::X,
                _ => T::Dep(rng.random_range(0..DEPENDENTS.len())),
            };
        }
        if rng.random_bool(0.1) {
            return T::Neg(Box::new(random_tree(rng, depth - 1)));
        }
        let op = ['+', '-', '*', '/'][rng.random_range(0..4)];
        T::Op(op, Box::new(random_tree(rng, depth - 1)), Box::new(random_tree(rng, depth - 1)))
    }

    /// Fully parenthesized text; negative literals become `(-v)`.
    pub fn render(t: &T) -> String {
        match t {
            T::Lit(v) if *v < 0.0 => format!("(-{})", -v),
            T::Lit(v) => format!("{v}"),
            T::X => "x".into(),
            T::Dep(i) => format!("[{}]", DEPENDENTS[*i]),
            T::Neg(inner) => format!("(-{})", render(inner)),
            T::Op(op, a, b) => format!("({} {op} {})", render(a), render(b)),
        }
    }

    /// `None` on division by zero.
    pub fn eval(t: &T, x: f64, deps: &[f64; 3]) -> Option<f64> {
        Some(match t {
            T::Lit(v) => *v,
            T::X => x,
            T::Dep(i) => deps[*i],
            T::Neg(inner) => -eval(inner, x, deps)?,
            T::Op(op, a, b) => {
                let (a, b) = (eval(a, x, deps)?, eval(b, x, deps)?);
                match op {
                    '+' => a + b,
                    '-' => a - b,
                    '*' => a * b,
                    _ if b == 0.0 => return None,
                    _ => a / b,
                }
            }
        })
    }

    pub fn depth(t: &T) -> u32 {
        match t {
            T::Lit(_) | T::X | T::Dep(_) => 0,
            T::Neg(inner) => 1 + depth(inner),
            T::Op(_, a, b) => 1 + depth(a).max(depth(b)),
        }
    }

    pub fn close(a: f64, b: f64, rel: f64) -> bool {
        a == b || (a - b).abs() <= rel * a.abs().max(b.abs())
    }
}
