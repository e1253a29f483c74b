//! Tests against a real listener: the WebSocket event stream and live steering.

mod common;

use std::net::SocketAddr;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use agriswarm_core::sim::{replay, TraceEvent};
use agriswarm_gateway::router;
use common::{sample_scenario, Api};

type Socket = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn serve(api: &Api) -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(api.state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

async fn connect(addr: SocketAddr, run_id: &str, query: &str) -> Socket {
    let (ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/api/runs/{run_id}/events{query}"))
        .await
        .unwrap();
    ws
}

/// Next text frame, `None` on close or after `wait` without one.
async fn next_event(ws: &mut Socket, wait: Duration) -> Option<String> {
    loop {
        match tokio::time::timeout(wait, ws.next()).await {
            Err(_) => return None,
            Ok(None) | Ok(Some(Err(_))) | Ok(Some(Ok(Message::Close(_)))) => return None,
            Ok(Some(Ok(Message::Text(t)))) => return Some(t),
            Ok(Some(Ok(_))) => continue,
        }
    }
}

async fn drain(ws: &mut Socket) -> Vec<String> {
    let mut out = Vec::new();
    while let Some(e) = next_event(ws, Duration::from_secs(30)).await {
        out.push(e);
    }
    out
}

fn tick(line: &str) -> u64 {
    serde_json::from_str::<TraceEvent>(line).unwrap().tick
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn event_stream_equals_the_trace() {
    let api = Api::new();
    let addr = serve(&api).await;
    let h = api
        .run(json!({"scenario": sample_scenario(), "playback_rate": 2000}))
        .await;
    let id = h["run_id"].as_str().unwrap();

    let mut live = connect(addr, id, "").await;
    let streamed = drain(&mut live).await;
    api.wait_finished(id).await;
    let trace = api.trace_events(id).await;
    assert_eq!(streamed, trace);
    assert!(streamed.windows(2).all(|w| tick(&w[0]) <= tick(&w[1])));
    assert!(streamed.last().unwrap().contains("\"kind\":\"done\""));

    let mut late = connect(addr, id, "?from_tick=100").await;
    let tail = drain(&mut late).await;
    let expected: Vec<String> = trace.iter().filter(|l| tick(l) >= 100).cloned().collect();
    assert!(!expected.is_empty());
    assert_eq!(tail, expected);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn pause_stops_the_stream_and_resume_continues_it() {
    let api = Api::new();
    let addr = serve(&api).await;
    let h = api
        .run(json!({"scenario": sample_scenario(), "playback_rate": 100}))
        .await;
    let id = h["run_id"].as_str().unwrap().to_string();
    let mut ws = connect(addr, &id, "").await;

    let mut streamed = Vec::new();
    while streamed.len() < 20 {
        streamed.push(
            next_event(&mut ws, Duration::from_secs(10))
                .await
                .expect("events before pause"),
        );
    }
    let paused = api.post(&format!("/api/runs/{id}/pause"), &json!({})).await.json();
    assert_eq!(paused["status"], "paused");
    let paused_at = paused["tick"].as_u64().unwrap();

    // Everything already simulated arrives, then nothing from a later tick.
    while let Some(e) = next_event(&mut ws, Duration::from_millis(300)).await {
        assert!(
            tick(&e) < paused_at,
            "event at tick {} after pause at {paused_at}",
            tick(&e)
        );
        streamed.push(e);
    }
    let before = api.get(&format!("/api/runs/{id}")).await.json();
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert_eq!(api.get(&format!("/api/runs/{id}")).await.json()["tick"], before["tick"]);
    assert!(next_event(&mut ws, Duration::from_millis(200)).await.is_none());

    api.post(&format!("/api/runs/{id}/resume"), &json!({})).await;
    let first = next_event(&mut ws, Duration::from_secs(10))
        .await
        .expect("events after resume");
    assert!(tick(&first) >= paused_at);
    streamed.push(first);
    for _ in 0..20 {
        streamed.push(next_event(&mut ws, Duration::from_secs(10)).await.unwrap());
    }
    let aborted = api.post(&format!("/api/runs/{id}/abort"), &json!({})).await.json();
    assert_eq!(aborted["status"], "aborted");
    streamed.extend(drain(&mut ws).await);
    api.wait_finished(&id).await;

    let trace = api.trace_events(&id).await;
    assert_eq!(streamed, trace, "stream has a gap or an extra event");

    // The aborted run replays to the same tick with the same lines.
    let text = api.get(&format!("/api/runs/{id}/trace")).await.text();
    let r = replay(&text).unwrap();
    assert_eq!(r.trace, text);
}

fn without(scenario: &Value, tick: u64) -> Value {
    let mut s = scenario.clone();
    s["faults"].as_array_mut().unwrap().retain(|f| f["at_tick"] != tick);
    s
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn injected_fault_traces_like_a_scenario_fault() {
    let api = Api::new();
    let scenario = sample_scenario();
    let fault = scenario["faults"][0].clone();
    let at = fault["at_tick"].as_u64().unwrap();

    let scheduled = api.run(json!({"scenario": scenario, "playback_rate": 0})).await;
    let scheduled_id = scheduled["run_id"].as_str().unwrap();

    let live = api
        .run(json!({"scenario": without(&scenario, at), "paused": true, "playback_rate": 0}))
        .await;
    let live_id = live["run_id"].as_str().unwrap();
    let mut req = fault.clone();
    req["request_id"] = json!("inject-1");
    let r = api.post(&format!("/api/runs/{live_id}/faults"), &req).await;
    assert_eq!(r.status, axum::http::StatusCode::ACCEPTED);
    assert_eq!(r.json(), fault);
    api.post(&format!("/api/runs/{live_id}/resume"), &json!({})).await;

    api.wait_finished(scheduled_id).await;
    api.wait_finished(live_id).await;
    let a = api.trace_events(scheduled_id).await;
    let b = api.trace_events(live_id).await;
    let fault_line = |lines: &[String]| {
        lines
            .iter()
            .find(|l| l.contains("\"kind\":\"fault\""))
            .cloned()
            .unwrap()
    };
    assert_eq!(fault_line(&a), fault_line(&b));
    assert_eq!(a, b);

    let text = api.get(&format!("/api/runs/{live_id}/trace")).await.text();
    let replayed = replay(&text).unwrap();
    assert_eq!(replayed.trace, text);
    let report = api.get(&format!("/api/runs/{scheduled_id}/report")).await.bytes;
    assert_eq!(replayed.report_json.as_bytes(), &report[..]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn live_fault_fires_at_the_next_tick_boundary() {
    let api = Api::new();
    let h = api
        .run(json!({"scenario": without(&sample_scenario(), 80), "playback_rate": 50}))
        .await;
    let id = h["run_id"].as_str().unwrap();
    tokio::time::sleep(Duration::from_millis(200)).await;
    let paused_at = api.post(&format!("/api/runs/{id}/pause"), &json!({})).await.json()["tick"]
        .as_u64()
        .unwrap();
    assert!(paused_at > 0);
    let r = api
        .post(
            &format!("/api/runs/{id}/faults"),
            &json!({"uav_id": 2, "kind": {"type": "controller_fail"}}),
        )
        .await;
    assert_eq!(r.json()["at_tick"].as_u64(), Some(paused_at));
    api.post(&format!("/api/runs/{id}/resume"), &json!({})).await;
    while api.get(&format!("/api/runs/{id}")).await.json()["tick"]
        .as_u64()
        .unwrap()
        <= paused_at + 2
    {
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    api.post(&format!("/api/runs/{id}/abort"), &json!({})).await;
    api.wait_finished(id).await;
    let faults: Vec<String> = api
        .trace_events(id)
        .await
        .into_iter()
        .filter(|l| l.contains("\"kind\":\"fault\""))
        .collect();
    assert_eq!(faults.len(), 1);
    assert_eq!(tick(&faults[0]), paused_at);
}
