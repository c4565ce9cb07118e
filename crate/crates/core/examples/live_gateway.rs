//! Run the gateway on a simulated source, follow the live feed, query the
//! HTTP API and open a replay session.
//!
//! cargo run --example live_gateway

use std::time::Duration;

use futures::StreamExt;
use nviz::gateway::{serve, ServerConfig, SourceSpec};
use nviz::ingest::SimConfig;
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata");
    let store = tempfile::tempdir()?;
    let source =
        SourceSpec::Sim { config: SimConfig { seed: 1, rate: 400.0, count: 250, ..SimConfig::default() }, pace: true };
    let cfg = ServerConfig::new(
        "127.0.0.1:0".parse()?,
        store.path(),
        data.join("network.xml"),
        data.join("packets.xml"),
        source,
    );
    let server = serve(cfg).await?;
    let base = format!("http://{}", server.local_addr());
    println!("gateway at {base}");

    let (mut live, _) = tokio_tungstenite::connect_async(format!("ws://{}/ws/live", server.local_addr())).await?;
    for _ in 0..4 {
        if let Some(Ok(msg)) = live.next().await {
            let event: Value = serde_json::from_str(msg.to_text()?)?;
            println!("live event: {}", event["type"]);
        }
    }

    let injected: Value = reqwest::Client::new()
        .post(format!("{base}/api/simulate"))
        .body("0|2|0|3|1|6F|0|7B|")
        .send()
        .await?
        .json()
        .await?;
    println!("injected: {}", injected["packet"]["fields"]);

    while server.status().packet_count < 251 {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let state: Value = reqwest::get(format!("{base}/api/state")).await?.json().await?;
    println!("live state: {} nodes, {} packets", state["nodes"].as_array().map_or(0, Vec::len), state["packet_count"]);
    let checkpoints: Value = reqwest::get(format!("{base}/api/checkpoints")).await?.json().await?;
    println!("checkpoints: {checkpoints}");

    let at = checkpoints[0]["t"].as_u64().unwrap_or(0);
    let session: Value = reqwest::Client::new()
        .post(format!("{base}/api/replay/sessions"))
        .body(json!({ "at": at }).to_string())
        .send()
        .await?
        .json()
        .await?;
    let id = &session["id"];
    let view: Value = reqwest::get(format!("{base}/api/replay/{id}")).await?.json().await?;
    println!(
        "replay session {id} at {}: {} nodes",
        view["status"]["cursor"],
        view["converted"]["nodes"].as_array().map_or(0, Vec::len)
    );

    server.shutdown().await?;
    println!("shut down; pending logs sealed");
    Ok(())
}
