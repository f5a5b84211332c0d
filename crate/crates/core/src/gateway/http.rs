//! HTTP and WebSocket routes under `/api/v1`.

use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::mpsc;

use super::{Gateway, GatewayError, API_SCHEMA};
use crate::events::{EventBus, StreamBody, StreamFilter, StreamItem};

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let status = match &self {
            GatewayError::CampaignHalted(_) => StatusCode::CONFLICT,
            GatewayError::PathEscape(_) => StatusCode::FORBIDDEN,
            GatewayError::NotFound(_) => StatusCode::NOT_FOUND,
            GatewayError::BadRequest(_) => StatusCode::BAD_REQUEST,
            GatewayError::Reserved(_) => StatusCode::NOT_IMPLEMENTED,
            GatewayError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({"error": {"kind": self.kind(), "message": self.to_string()}});
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, GatewayError>;

#[derive(Debug, Default, Deserialize)]
struct PageQuery {
    page: Option<usize>,
    page_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct TopQuery {
    top_k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
struct PathQuery {
    #[serde(default)]
    path: String,
}

#[derive(Debug, Deserialize)]
struct ChatBody {
    message: String,
    /// Run a short answer session as well.
    #[serde(default)]
    ask: bool,
}

#[derive(Debug, Default, Deserialize)]
struct StreamQuery {
    filter: Option<String>,
    /// Replay board events after this journal sequence before going live.
    since: Option<u64>,
}

/// The full application: API routes plus the optional static dashboard.
pub fn router(gateway: Gateway) -> Router {
    let api = Router::new()
        .route("/campaign", get(campaign))
        .route("/board", get(board))
        .route("/board/{column}", get(board_column))
        .route("/experiments/{id}", get(experiment))
        .route("/experiments/{id}/veto", post(reserved_veto))
        .route("/leaderboard", get(leaderboard))
        .route("/playbook", get(playbook).put(reserved_playbook))
        .route("/files/tree", get(files_tree))
        .route("/files/content", get(files_content))
        .route("/reports", get(reports))
        .route("/reports/{*path}", get(report))
        .route("/chat", get(chat_history).post(chat_post))
        .route("/sessions", get(sessions))
        .route("/schema", get(schema))
        .route("/stream", get(stream));
    Router::new()
        .nest("/api/v1", api)
        .fallback(static_files)
        .with_state(gateway)
}

/// Binds and serves until the process exits.
pub async fn serve(gateway: Gateway, bind: &str) -> std::io::Result<()> {
    let addr: SocketAddr = bind
        .parse()
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("{bind}: {e}")))?;
    serve_on(tokio::net::TcpListener::bind(addr).await?, gateway).await
}

pub async fn serve_on(listener: tokio::net::TcpListener, gateway: Gateway) -> std::io::Result<()> {
    log::info!("gateway listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(gateway)).await
}

async fn campaign(State(g): State<Gateway>) -> impl IntoResponse {
    Json(g.campaign())
}

async fn board(State(g): State<Gateway>, Query(q): Query<PageQuery>) -> impl IntoResponse {
    Json(g.get_board(q.page.unwrap_or(1), q.page_size))
}

async fn board_column(
    State(g): State<Gateway>,
    UrlPath(column): UrlPath<String>,
    Query(q): Query<PageQuery>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(g.get_column(&column, q.page.unwrap_or(1), q.page_size)?))
}

async fn experiment(State(g): State<Gateway>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(g.get_experiment(&id)?))
}

async fn leaderboard(State(g): State<Gateway>, Query(q): Query<TopQuery>) -> impl IntoResponse {
    Json(g.get_leaderboard(q.top_k))
}

async fn playbook(State(g): State<Gateway>) -> impl IntoResponse {
    Json(g.board().read(|b| b.playbook().to_vec()))
}

async fn reserved_veto(State(g): State<Gateway>, UrlPath(id): UrlPath<String>) -> GatewayError {
    g.reserved(&format!("veto of {id}"))
}

async fn reserved_playbook(State(g): State<Gateway>) -> GatewayError {
    g.reserved("playbook edits")
}

async fn files_tree(State(g): State<Gateway>, Query(q): Query<PathQuery>) -> ApiResult<impl IntoResponse> {
    Ok(Json(g.get_tree(&q.path)?))
}

async fn files_content(State(g): State<Gateway>, Query(q): Query<PathQuery>) -> ApiResult<Response> {
    let bytes = g.get_file(&q.path)?;
    Ok(bytes_response(&q.path, bytes))
}

async fn reports(State(g): State<Gateway>) -> impl IntoResponse {
    Json(g.list_reports())
}

async fn report(State(g): State<Gateway>, UrlPath(path): UrlPath<String>) -> ApiResult<Response> {
    let bytes = g.get_report(&path)?;
    Ok(bytes_response(&path, bytes))
}

async fn chat_history(State(g): State<Gateway>) -> impl IntoResponse {
    Json(g.chat_history())
}

async fn chat_post(State(g): State<Gateway>, Json(body): Json<ChatBody>) -> ApiResult<impl IntoResponse> {
    let ack = if body.ask {
        tokio::task::spawn_blocking(move || g.ask(&body.message))
            .await
            .map_err(|e| GatewayError::Io(std::io::Error::other(e.to_string())))??
    } else {
        g.post_chat(&body.message)?
    };
    Ok((StatusCode::CREATED, Json(ack)))
}

/// Finished sessions from the session index, oldest first.
async fn sessions(State(g): State<Gateway>) -> ApiResult<impl IntoResponse> {
    let index = g.workspace().join("logs/sessions/index.jsonl");
    let text = match std::fs::read_to_string(&index) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    let rows: Vec<serde_json::Value> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    Ok(Json(rows))
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/json")], API_SCHEMA)
}

async fn stream(
    State(g): State<Gateway>,
    Query(q): Query<StreamQuery>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let raw = q.filter.unwrap_or_default();
    let filter = StreamFilter::parse(&raw).ok_or_else(|| GatewayError::BadRequest(format!("bad filter `{raw}`")))?;
    Ok(ws.on_upgrade(move |socket| pump(socket, g, filter, q.since)))
}

/// Backlog replayed for `since`: journaled events after it, matching the filter.
pub fn backlog(g: &Gateway, filter: &StreamFilter, since: u64) -> Vec<StreamItem> {
    g.board().read(|b| {
        b.events()
            .iter()
            .filter(|e| e.seq > since)
            .map(|e| StreamItem {
                seq: 0,
                body: StreamBody::Board { event: e.clone() },
            })
            .filter(|i| filter.matches(&i.body))
            .collect()
    })
}

async fn pump(mut socket: WebSocket, g: Gateway, filter: StreamFilter, since: Option<u64>) {
    // Subscribe before reading the backlog so nothing falls between them.
    let sub = g.board().bus().subscribe(filter.clone(), EventBus::DEFAULT_CAPACITY);
    let mut replayed_to = 0;
    if let Some(since) = since {
        for item in backlog(&g, &filter, since) {
            if let StreamBody::Board { event } = &item.body {
                replayed_to = event.seq;
            }
            if send(&mut socket, &item).await.is_err() {
                return;
            }
        }
    }
    let (tx, mut rx) = mpsc::channel::<StreamItem>(256);
    let reader = tokio::task::spawn_blocking(move || {
        while !tx.is_closed() {
            if let Some(item) = sub.recv_timeout(Duration::from_millis(250))
                && tx.blocking_send(item).is_err() {
                    break;
                }
        }
    });
    loop {
        tokio::select! {
            item = rx.recv() => {
                let Some(item) = item else { break };
                if let StreamBody::Board { event } = &item.body
                    && event.seq <= replayed_to {
                        continue;
                    }
                if send(&mut socket, &item).await.is_err() {
                    break;
                }
            }
            msg = socket.recv() => match msg {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                _ => {}
            },
        }
    }
    drop(rx);
    let _ = reader.await;
}

async fn send(socket: &mut WebSocket, item: &StreamItem) -> Result<(), axum::Error> {
    let text = serde_json::to_string(item).expect("stream items serialize");
    socket.send(Message::Text(text.into())).await
}

fn content_type(path: &str) -> &'static str {
    match Path::new(path).extension().and_then(|e| e.to_str()).unwrap_or("") {
        "json" => "application/json",
        "md" => "text/markdown; charset=utf-8",
        "html" => "text/html; charset=utf-8",
        "js" => "text/javascript",
        "css" => "text/css",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        _ => "text/plain; charset=utf-8",
    }
}

fn bytes_response(path: &str, bytes: Vec<u8>) -> Response {
    let ct = if content_type(path).starts_with("text/plain") && std::str::from_utf8(&bytes).is_err() {
        "application/octet-stream"
    } else {
        content_type(path)
    };
    ([(header::CONTENT_TYPE, ct)], bytes).into_response()
}

fn static_path(root: &Path, uri: &Uri) -> Option<PathBuf> {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let p = root.join(rel);
    if p.is_file() {
        Some(p)
    } else {
        // Client-side routes fall back to the app shell.
        Some(root.join("index.html")).filter(|p| p.is_file())
    }
}

async fn static_files(State(g): State<Gateway>, uri: Uri) -> Response {
    let Some(root) = &g.static_dir else {
        return GatewayError::NotFound(uri.path().to_string()).into_response();
    };
    match static_path(root, &uri) {
        Some(p) => match std::fs::read(&p) {
            Ok(bytes) => bytes_response(&p.to_string_lossy(), bytes),
            Err(e) => GatewayError::Io(e).into_response(),
        },
        None => GatewayError::NotFound(uri.path().to_string()).into_response(),
    }
}
