mod support;

use std::net::SocketAddr;
use std::sync::Arc;

use critstates_service::protocol::{Envelope, EnvelopeKind};
use critstates_service::session::{read_event_log, Command, SessionReport};
use critstates_service::{AppState, Assets, ServerConfig};
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

struct Fixture {
    addr: SocketAddr,
    policy: String,
    deck: String,
    logs: std::path::PathBuf,
    _dir: tempfile::TempDir,
}

async fn spawn() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let assets_dir = dir.path().join("assets");
    std::fs::create_dir_all(&assets_dir).unwrap();
    let (policy, deck) = support::write_assets(&assets_dir);
    std::fs::write(assets_dir.join("junk.ckpt"), b"CSQ1 but truncated").unwrap();
    let logs = dir.path().join("logs");
    let state = AppState::new(Assets::scan(&assets_dir).unwrap(), ServerConfig { log_dir: Some(logs.clone()), ..Default::default() })
        .unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(critstates_service::serve(listener, Arc::clone(&state)));
    Fixture { addr, policy, deck, logs, _dir: dir }
}

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn next_envelope(ws: &mut Ws) -> Envelope {
    loop {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

fn url(f: &Fixture, path: &str) -> String {
    format!("http://{}{path}", f.addr)
}

async fn post(c: &reqwest::Client, url: String, body: Value) -> (u16, Value) {
    let r = c.post(url).json(&body).send().await.unwrap();
    (r.status().as_u16(), r.json().await.unwrap())
}

#[tokio::test]
async fn decks_and_policies_are_listed_and_served() {
    let f = spawn().await;
    let c = reqwest::Client::new();
    let decks: Value = c.get(url(&f, "/decks")).send().await.unwrap().json().await.unwrap();
    assert_eq!(decks.as_array().unwrap().len(), 1);
    assert_eq!(decks[0]["id"], f.deck.as_str());
    let policies: Value = c.get(url(&f, "/policies")).send().await.unwrap().json().await.unwrap();
    assert_eq!(policies.as_array().unwrap().len(), 1);
    let deck: Value = c.get(url(&f, &format!("/decks/{}", f.deck))).send().await.unwrap().json().await.unwrap();
    assert_eq!(deck["entries"].as_array().unwrap().len(), 3);
    let png = c.get(url(&f, &format!("/decks/{}/frames/0", f.deck))).send().await.unwrap();
    assert_eq!(png.headers()["content-type"], "image/png");
    assert_eq!(&png.bytes().await.unwrap()[..4], b"\x89PNG");
    assert_eq!(c.get(url(&f, "/decks/nope")).send().await.unwrap().status(), 404);
    assert_eq!(c.get(url(&f, &format!("/decks/{}/frames/9", f.deck))).send().await.unwrap().status(), 404);
}

#[tokio::test]
async fn decisions_are_idempotent_per_client_and_deck() {
    let f = spawn().await;
    let c = reqwest::Client::new();
    let body = json!({"client": "tab-1", "deck": f.deck, "decision": "deploy", "unknown": 1});
    let (s1, r1) = post(&c, url(&f, "/decisions"), body.clone()).await;
    let (s2, r2) = post(&c, url(&f, "/decisions"), body).await;
    assert_eq!((s1, s2), (201, 200));
    assert_eq!(r1, r2);
    let (s3, _) = post(&c, url(&f, "/decisions"), json!({"client": "tab-1", "deck": f.deck, "decision": "decline"})).await;
    assert_eq!(s3, 409);
    let (s4, _) = post(&c, url(&f, "/decisions"), json!({"client": "tab-2", "deck": f.deck, "decision": "decline"})).await;
    assert_eq!(s4, 201);
    let (s5, _) = post(&c, url(&f, "/decisions"), json!({"client": "tab-2", "deck": "missing", "decision": "decline"})).await;
    assert_eq!(s5, 404);
    let all: Value = c.get(url(&f, "/decisions")).send().await.unwrap().json().await.unwrap();
    assert_eq!(all.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn session_start_validates_its_inputs() {
    let f = spawn().await;
    let c = reqwest::Client::new();
    let (s, _) = post(&c, url(&f, "/sessions"), json!({"policy": "0000"})).await;
    assert_eq!(s, 404);
    let (s, _) = post(&c, url(&f, "/sessions"), json!({"policy": f.policy, "env": "chess"})).await;
    assert_eq!(s, 400);
    let (s, _) = post(&c, url(&f, "/sessions"), json!({"policy": f.policy, "env": "driving"})).await;
    assert_eq!(s, 400);
    let (s, body) = post(&c, url(&f, "/sessions"), json!({"policy": f.policy, "deck": f.deck, "mode": "observe"})).await;
    assert_eq!(s, 201);
    assert_eq!(body["frame"]["step"], 0);
    assert_eq!(body["frame"]["controller"], "policy");
    let id = body["session"].as_str().unwrap();
    let (s, _) = post(&c, url(&f, &format!("/sessions/{id}/step")), json!({"command": "take_control", "action": 0})).await;
    assert_eq!(s, 400);
    let (s, _) = post(&c, url(&f, &format!("/sessions/{id}/step")), json!({"command": "none"})).await;
    assert_eq!(s, 200);
    assert_eq!(c.get(url(&f, &format!("/sessions/{id}/report"))).send().await.unwrap().status(), 409);
}

#[tokio::test]
async fn scripted_client_runs_a_takeover_session_end_to_end() {
    let f = spawn().await;
    let c = reqwest::Client::new();
    let (s, body) =
        post(&c, url(&f, "/sessions"), json!({"policy": f.policy, "env": "pong", "seed": 3, "reveal_oracle": true})).await;
    assert_eq!(s, 201);
    let id = body["session"].as_str().unwrap().to_string();

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/sessions/{id}/stream", f.addr)).await.unwrap();
    let first = next_envelope(&mut ws).await;
    assert_eq!((first.kind, first.step), (EnvelopeKind::Frame, 0));

    let mut human_steps = 0;
    for step in 0..40u64 {
        let cmd = match step {
            10 => Command::TakeControl { action: 2 },
            15 => Command::Release,
            _ => Command::None,
        };
        human_steps += usize::from((10..15).contains(&step));
        ws.send(Message::Text(Envelope::command(step, cmd).to_text().into())).await.unwrap();
        let msg = next_envelope(&mut ws).await.frame_message().expect("frame");
        assert_eq!(msg.frame.step, step + 1);
        assert_eq!(msg.intervention.is_some(), (10..15).contains(&step));
        if step == 10 {
            assert_eq!(msg.last.unwrap().applied_action, 2);
        }
    }
    ws.send(Message::Text(r#"{"type":"command","payload":{"command":"take_control","action":7}}"#.into())).await.unwrap();
    let err = next_envelope(&mut ws).await;
    assert_eq!((err.kind, err.step), (EnvelopeKind::Error, 40));
    ws.close(None).await.unwrap();

    let frame = c.get(url(&f, &format!("/sessions/{id}/frames/40"))).send().await.unwrap();
    assert_eq!(frame.status(), 200);
    let (s, report) = post(&c, url(&f, &format!("/sessions/{id}/end")), json!({})).await;
    assert_eq!(s, 200);
    let report: SessionReport = serde_json::from_value(report).unwrap();
    assert_eq!((report.total_steps, report.interventions.len()), (40, human_steps));
    let fetched: SessionReport = c.get(url(&f, &format!("/sessions/{id}/report"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(fetched, report);
    let events = read_event_log(f.logs.join(format!("{id}.jsonl"))).unwrap();
    assert_eq!(SessionReport::from_events(&events).unwrap(), report);
    let (s, _) = post(&c, url(&f, &format!("/sessions/{id}/step")), json!({"command": "none"})).await;
    assert_eq!(s, 409);
}

#[tokio::test]
async fn disconnect_freezes_and_interactive_sessions_advance_on_their_own() {
    let f = spawn().await;
    let c = reqwest::Client::new();
    let (_, body) =
        post(&c, url(&f, "/sessions"), json!({"policy": f.policy, "interactive": true, "step_timeout_ms": 20})).await;
    let id = body["session"].as_str().unwrap().to_string();
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/sessions/{id}/stream", f.addr)).await.unwrap();
    let mut last = 0;
    while last < 5 {
        last = next_envelope(&mut ws).await.step;
    }
    drop(ws);
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;
    let a: Value = c.get(url(&f, &format!("/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    tokio::time::sleep(std::time::Duration::from_millis(200)).await;
    let b: Value = c.get(url(&f, &format!("/sessions/{id}"))).send().await.unwrap().json().await.unwrap();
    assert_eq!(a["frame"]["step"], b["frame"]["step"]);
    assert!(a["frame"]["step"].as_u64().unwrap() >= 5);
}
