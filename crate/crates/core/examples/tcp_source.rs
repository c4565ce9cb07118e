//! Feed a live TCP source with length-prefixed frames and read the packets
//! back.

use std::net::TcpStream;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use nviz::codec::parse_hex_log;
use nviz::ingest::{write_frame, PacketSource, TcpSource};

fn main() -> std::io::Result<()> {
    let cancel = Arc::new(AtomicBool::new(false));
    let mut source = TcpSource::bind("127.0.0.1:0", Arc::clone(&cancel))?;
    let addr = source.local_addr()?;

    let sender = std::thread::spawn(move || -> std::io::Result<()> {
        let mut conn = TcpStream::connect(addr)?;
        for hex in ["0|2|0|3|1|6F|0|7B|", "0|1|0|2|0|7|91|3|", "0|4|1A|12|34|"] {
            write_frame(&mut conn, &parse_hex_log(hex).expect("well-formed hex"))?;
        }
        Ok(())
    });

    for _ in 0..3 {
        let packet = source.next_packet().expect("source is live");
        println!("t={} bytes={:02X?}", packet.received_at, packet.bytes);
    }
    sender.join().expect("sender thread")?;
    Ok(())
}
