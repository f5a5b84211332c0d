mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use futures_util::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use campaign::board::{Board, Direction, MetricSpec, Phase, Policy, SharedBoard};
use campaign::clock::{SharedClock, VirtualClock};
use campaign::events::EventBus;
use campaign::gateway::{http, Gateway, COLUMNS};

fn finished_gateway() -> (common::Run, Gateway) {
    let run = common::run("budget_exhaustion");
    let board = run.campaign.board().unwrap().clone();
    let g = Gateway::new(board, run.ws(), run.campaign.clock.clone()).with_page_size(5);
    (run, g)
}

fn live_gateway() -> (tempfile::TempDir, Gateway) {
    let dir = tempfile::tempdir().unwrap();
    let mut b = Board::new("live", 5, MetricSpec::single("mase", Direction::Min), Policy::default(), 0);
    b.set_phase(Phase::Phase3, 0);
    for n in 1..=3 {
        b.propose(&format!("exp_{n:03}"), "h", None, 0);
    }
    let clock: SharedClock = Arc::new(VirtualClock::new(1_000));
    let shared = SharedBoard::new(b, EventBus::new());
    let g = Gateway::new(shared, dir.path(), clock);
    (dir, g)
}

async fn call(g: &Gateway, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = http::router(g.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn get_json(g: &Gateway, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(g, "GET", uri, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn summary_and_board_columns() {
    let (_run, g) = finished_gateway();
    let (s, c) = get_json(&g, "/api/v1/campaign").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(c["id"], "budget_exhaustion");
    assert_eq!(c["halted"], true);
    assert_eq!(c["band"], "stop");

    let (s, b) = get_json(&g, "/api/v1/board").await;
    assert_eq!(s, StatusCode::OK);
    let cols = b["columns"].as_array().unwrap();
    let names: Vec<&str> = cols.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, COLUMNS);
    let total: u64 = cols.iter().map(|c| c["total"].as_u64().unwrap()).sum();
    assert_eq!(total, 12);
}

#[tokio::test]
async fn column_pagination() {
    let (_run, g) = finished_gateway();
    let (_, p1) = get_json(&g, "/api/v1/board/done?page=1").await;
    let (_, p3) = get_json(&g, "/api/v1/board/done?page=3").await;
    assert_eq!(p1["total"], 12);
    assert_eq!(p1["pages"], 3);
    assert_eq!(p1["cards"].as_array().unwrap().len(), 5);
    assert_eq!(p3["cards"].as_array().unwrap().len(), 2);
    let (_, big) = get_json(&g, "/api/v1/board/done?page_size=50").await;
    assert_eq!(big["cards"].as_array().unwrap().len(), 12);

    let (s, e) = get_json(&g, "/api/v1/board/limbo").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(e["error"]["kind"], "not_found");
}

#[tokio::test]
async fn experiment_and_leaderboard() {
    let (_run, g) = finished_gateway();
    let (s, e) = get_json(&g, "/api/v1/experiments/exp_003").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(e["name"], "exp_003");
    assert_eq!(e["state"], "done");

    let (_, lb) = get_json(&g, "/api/v1/leaderboard?top_k=3").await;
    let rows = lb["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let values: Vec<f64> = rows.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]), "min direction ranks ascending: {values:?}");
    assert_eq!(lb["direction"], "min");
}

#[tokio::test]
async fn files_are_confined() {
    let (_run, g) = finished_gateway();
    let (s, tree) = get_json(&g, "/api/v1/files/tree").await;
    assert_eq!(s, StatusCode::OK);
    assert!(tree.as_array().unwrap().iter().any(|e| e["name"] == "adapter" && e["kind"] == "dir"));

    let (s, body) = call(&g, "GET", "/api/v1/files/content?path=learnings.md", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!body.is_empty());

    for bad in ["../../etc/passwd", "/etc/passwd", "adapter/../../x"] {
        let (s, e) = get_json(&g, &format!("/api/v1/files/content?path={bad}")).await;
        assert_eq!(s, StatusCode::FORBIDDEN, "{bad}");
        assert_eq!(e["error"]["kind"], "path_escape");
    }
}

#[tokio::test]
async fn chat_is_refused_after_halt() {
    let (_run, g) = finished_gateway();
    let (s, e) = get_json_post(&g, "/api/v1/chat", json!({"message": "try dropout"})).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"]["kind"], "campaign_halted");
}

async fn get_json_post(g: &Gateway, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(g, "POST", uri, Some(body)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

#[tokio::test]
async fn chat_round_trip_on_a_live_board() {
    let (_dir, g) = live_gateway();
    let (s, ack) = get_json_post(&g, "/api/v1/chat", json!({"message": "focus on seasonality"})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert!(ack["seq"].as_u64().unwrap() > 0);
    let (_, hist) = get_json(&g, "/api/v1/chat").await;
    assert_eq!(hist[0]["message"], "focus on seasonality");

    let (s, _) = get_json_post(&g, "/api/v1/chat", json!({"message": "   "})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn read_only_gateway_refuses_chat() {
    let (_dir, g) = live_gateway();
    let g = g.read_only();
    let (s, _) = get_json_post(&g, "/api/v1/chat", json!({"message": "hello"})).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn reserved_endpoints_are_501() {
    let (_dir, g) = live_gateway();
    let (s, e) = get_json_post(&g, "/api/v1/experiments/exp_001/veto", json!({})).await;
    assert_eq!(s, StatusCode::NOT_IMPLEMENTED);
    assert_eq!(e["error"]["kind"], "reserved");
    let (s, _) = call(&g, "PUT", "/api/v1/playbook", Some(json!({"content": "x"}))).await;
    assert_eq!(s, StatusCode::NOT_IMPLEMENTED);
}

#[tokio::test]
async fn reports_sessions_and_schema() {
    let run = common::run("happy_path");
    let g = Gateway::new(run.campaign.board().unwrap().clone(), run.ws(), run.campaign.clock.clone());
    let (_, reports) = get_json(&g, "/api/v1/reports").await;
    let reports: Vec<String> = serde_json::from_value(reports).unwrap();
    assert!(reports.contains(&"reports/milestone_001/overview.md".to_string()), "{reports:?}");
    let (s, body) = call(&g, "GET", "/api/v1/reports/milestone_001/overview.md", None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!body.is_empty());

    let (_, sessions) = get_json(&g, "/api/v1/sessions").await;
    assert_eq!(sessions.as_array().unwrap().len(), run.outcome.accounting.sessions);

    let (s, schema) = get_json(&g, "/api/v1/schema").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(schema["base"], "/api/v1");
}

#[tokio::test]
async fn unknown_routes_without_static_dir_are_404() {
    let (_dir, g) = live_gateway();
    let (s, _) = call(&g, "GET", "/index.html", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_dir_serves_the_app_shell() {
    let (_dir, g) = live_gateway();
    let web = tempfile::tempdir().unwrap();
    std::fs::write(web.path().join("index.html"), "<html>board</html>").unwrap();
    let g = g.with_static_dir(Some(web.path().to_path_buf()));
    let (s, body) = call(&g, "GET", "/experiments/exp_1", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>board</html>");
    let (s, _) = call(&g, "GET", "/../secret", None).await;
    assert_ne!(s, StatusCode::INTERNAL_SERVER_ERROR);
}

#[tokio::test]
async fn stream_replays_and_goes_live() {
    let (_dir, g) = live_gateway();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(http::serve_on(listener, g.clone()));

    let url = format!("ws://{addr}/api/v1/stream?filter=board&since=0");
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let backlog = g.board().read(|b| b.events().len());
    let mut seen = Vec::new();
    while seen.len() < backlog {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
        let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
        assert_eq!(v["type"], "board");
        seen.push(v["event"]["seq"].as_u64().unwrap());
    }
    assert_eq!(seen, (1..=backlog as u64).collect::<Vec<_>>());

    g.post_chat("live message").unwrap();
    let msg = tokio::time::timeout(Duration::from_secs(5), ws.next()).await.unwrap().unwrap().unwrap();
    let v: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
    assert_eq!(v["event"]["kind"], "chat");
    assert_eq!(v["event"]["message"], "live message");
    assert!(v["seq"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn stream_rejects_bad_filters() {
    let (_dir, g) = live_gateway();
    let req = Request::builder()
        .uri("/api/v1/stream?filter=bogus")
        .header("connection", "upgrade")
        .header("upgrade", "websocket")
        .header("sec-websocket-version", "13")
        .header("sec-websocket-key", "dGhlIHNhbXBsZSBub25jZQ==")
        .body(Body::empty())
        .unwrap();
    let resp = http::router(g).oneshot(req).await.unwrap();
    assert_ne!(resp.status(), StatusCode::SWITCHING_PROTOCOLS);
}
