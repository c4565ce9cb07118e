//! Schema-driven telemetry for wireless sensor networks.
//!
//! A network spec (XML) names the properties of nodes, links and the
//! environment, with byte lengths, valid ranges and unit-conversion
//! expressions. A packet spec (XML) lays out each packet type as a list of
//! those properties. From the two, `nviz` decodes binary packet streams,
//! folds them into an abstract network state, records checkpoints plus
//! packet logs, reconstructs the state at any past instant, and serves live
//! and replayed state over HTTP and WebSocket.
//!
//! | module | role |
//! |---|---|
//! | [`spec`] | parse and validate the network and packet specs |
//! | [`convert`] | unit-conversion expressions: parse, list dependents, evaluate |
//! | [`codec`] | binary packets and the pipe-hex log form |
//! | [`model`] | network state, diffs, converted views |
//! | [`checkpoint`] | checkpoint XML and the directory-backed store |
//! | [`replay`] | `state_at`, stepping and timed playback |
//! | [`ingest`] | file, simulator and TCP packet sources |
//! | [`gateway`] | HTTP + WebSocket service |
//! | [`cli`] | the `nviz` command line |
//!
//! Runnable examples, one per capability (`cargo run --example NAME`):
//!
//! | example | shows |
//! |---|---|
//! | `validate_specs` | loading specs, property table, packet lengths |
//! | `decode_packets` | decoding, rejection reasons, encoding |
//! | `unit_conversion` | converted readings and ad-hoc expressions |
//! | `checkpoint_roundtrip` | parsing and re-serializing a checkpoint |
//! | `simulate_and_record` | deterministic simulation into a store |
//! | `replay_time_travel` | `state_at`, stepping, playback |
//! | `live_gateway` | the service with live feed, API and replay sessions |
//! | `tcp_source` | the length-prefixed TCP packet source |
//!
//! ```
//! use nviz::codec::{decode_packet, parse_hex_log, RawPacket};
//! use nviz::model::{convert_fields, NetworkState};
//! use nviz::spec::Specs;
//!
//! let specs = Specs::parse(
//!     include_str!("../testdata/network.xml"),
//!     include_str!("../testdata/packets.xml"),
//! ).unwrap();
//! let raw = RawPacket::new(parse_hex_log("0|2|0|3|1|6F|0|7B|").unwrap(), 0);
//! let packet = decode_packet(&raw, &specs.network, &specs.packets).unwrap();
//! assert_eq!(packet.values, [3, 367, 123]);
//!
//! let mut state = NetworkState::new();
//! state.apply_packet(&packet).unwrap();
//! let fields = convert_fields(&packet, &state, &specs.network);
//! let temperature = fields[2].value.value.unwrap();
//! assert!((temperature - 123.0 * 122.3 / 367.0).abs() < 1e-12);
//! ```

pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod convert;
pub mod gateway;
pub mod ingest;
pub mod model;
pub mod replay;
pub mod spec;
