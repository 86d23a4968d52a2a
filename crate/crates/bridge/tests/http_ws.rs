use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use smarthouse_bridge::{Bridge, VarValue};
use smarthouse_core::closed_loop::{ClosedLoop, RunConfig};
use smarthouse_core::control::Mode;
use smarthouse_core::sharedvar::{EngineHandle, VarRecord};
use smarthouse_core::{ManualClock, SystemClock, Timestamp};
use tokio_tungstenite::tungstenite::Message;

async fn start(engine: &EngineHandle) -> Bridge {
    Bridge::bind(SocketAddr::from(([127, 0, 0, 1], 0)), engine.clone()).await.unwrap()
}

fn url(bridge: &Bridge, path: &str) -> String {
    format!("http://{}{}", bridge.local_addr(), path)
}

#[tokio::test]
async fn empty_cache_lists_nothing() {
    let engine = EngineHandle::new(Arc::new(SystemClock));
    let bridge = start(&engine).await;
    let body: BTreeMap<String, VarValue> =
        reqwest::get(url(&bridge, "/api/vars")).await.unwrap().json().await.unwrap();
    assert!(body.is_empty());
    bridge.shutdown(Duration::from_secs(1)).await.unwrap();
}

#[tokio::test]
async fn post_publishes_and_get_lists() {
    let engine = EngineHandle::new(Arc::new(ManualClock::new(Timestamp(42))));
    engine.publish_value_at("room1.temperature", 21.25, 7).unwrap();
    let bridge = start(&engine).await;
    let client = reqwest::Client::new();

    let res = client
        .post(url(&bridge, "/api/vars/room1.setpoint"))
        .json(&serde_json::json!({"value": 24}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 200);
    let rec: VarRecord = res.json().await.unwrap();
    assert_eq!(rec, VarRecord::new("room1.setpoint", 24.0, 42, 1));
    assert_eq!(engine.value("room1.setpoint"), Some(24.0));

    let raw: serde_json::Value = reqwest::get(url(&bridge, "/api/vars")).await.unwrap().json().await.unwrap();
    assert_eq!(
        raw,
        serde_json::json!({
            "room1.setpoint": {"value": 24.0, "timestamp_us": 42, "seq": 1},
            "room1.temperature": {"value": 21.25, "timestamp_us": 7, "seq": 1},
        })
    );

    let again: VarRecord = client
        .post(url(&bridge, "/api/vars/room1.setpoint"))
        .json(&serde_json::json!({"value": 23.5}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(again.seq, 2);
    bridge.shutdown(Duration::from_secs(1)).await.unwrap();
}

#[tokio::test]
async fn bad_writes_are_rejected() {
    let engine = EngineHandle::new(Arc::new(SystemClock));
    let bridge = start(&engine).await;
    let client = reqwest::Client::new();
    let post = |name: String, body: String| {
        client
            .post(url(&bridge, &format!("/api/vars/{name}")))
            .header("content-type", "application/json")
            .body(body)
            .send()
    };
    let res = post("a".into(), r#"{"value": "hot"}"#.into()).await.unwrap();
    assert!(res.status().is_client_error());
    let res = post("a".into(), "not json".into()).await.unwrap();
    assert!(res.status().is_client_error());
    let res = post("a".repeat(256), r#"{"value": 1}"#.into()).await.unwrap();
    assert_eq!(res.status(), 422);
    assert!(engine.snapshot_vars("*").is_empty());
    let res = reqwest::get(url(&bridge, "/api/vars/missing")).await.unwrap();
    assert_eq!(res.status(), 404);
    bridge.shutdown(Duration::from_secs(1)).await.unwrap();
}

#[tokio::test]
async fn websocket_streams_every_accepted_publish() {
    let engine = EngineHandle::new(Arc::new(SystemClock));
    let bridge = start(&engine).await;
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/api/stream", bridge.local_addr()))
        .await
        .unwrap();
    // Give the upgrade a moment to register its receiver.
    tokio::time::sleep(Duration::from_millis(50)).await;

    engine.publish(VarRecord::new("room2.light", 150.0, 1, 1)).unwrap();
    let _ = engine.publish(VarRecord::new("room2.light", 999.0, 1, 1)); // stale, not streamed
    reqwest::Client::new()
        .post(url(&bridge, "/api/vars/room2.setpoint"))
        .json(&serde_json::json!({"value": 21}))
        .send()
        .await
        .unwrap();

    let mut got = Vec::new();
    while got.len() < 2 {
        let msg = tokio::time::timeout(Duration::from_secs(2), ws.next()).await.unwrap().unwrap().unwrap();
        if let Message::Text(t) = msg {
            got.push(serde_json::from_str::<VarRecord>(&t).unwrap());
        }
    }
    assert_eq!(got[0], VarRecord::new("room2.light", 150.0, 1, 1));
    assert_eq!((got[1].name.as_str(), got[1].value, got[1].seq), ("room2.setpoint", 21.0, 1));
    let raw = serde_json::to_value(&got[1]).unwrap();
    let keys: Vec<&str> = raw.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, ["name", "seq", "timestamp_us", "value"]);
    ws.close(None).await.unwrap();
    bridge.shutdown(Duration::from_secs(1)).await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn setpoint_written_over_http_steers_the_next_evaluation() {
    let engine = EngineHandle::new(Arc::new(SystemClock));
    let bridge = start(&engine).await;
    let mut lp = ClosedLoop::new(&RunConfig::default()).unwrap().with_engine(engine.clone());
    for _ in 0..5 {
        lp.step().unwrap();
    }
    // Room 1 is warming from 19 °C toward the default 22 °C setpoint.
    assert_eq!(lp.station().controller(1).config.setpoint_c, 22.0);
    assert_eq!(lp.station().controller(1).state.mode, Mode::Heating);

    let res = reqwest::Client::new()
        .post(url(&bridge, "/api/vars/room1.setpoint"))
        .json(&serde_json::json!({"value": 18}))
        .send()
        .await
        .unwrap();
    assert_eq!(res.status(), 200);
    let evaluations = lp.station().tallies()[0].evaluations;
    let mut lp = tokio::task::spawn_blocking(move || {
        while lp.station().tallies()[0].evaluations == evaluations {
            lp.step().unwrap();
        }
        lp
    })
    .await
    .unwrap();
    assert_eq!(lp.station().controller(1).config.setpoint_c, 18.0);
    // 19 °C is at or above the new setpoint, so heating stops.
    assert_eq!(lp.station().controller(1).state.mode, Mode::Idle);
    assert_eq!(engine.value("room1.heat_on"), Some(0.0));
    lp.step().unwrap();
    bridge.shutdown(Duration::from_secs(1)).await.unwrap();
}
