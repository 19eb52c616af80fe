//! Serves a checkpoint over the remote scoring protocol.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use perce_core::model::Checkpoint;
use perce_core::scoring::wire::{score_request, ScoreRequest, SCORE_PATH};
use tokio::sync::oneshot;

#[derive(Clone)]
struct AppState {
    checkpoint: Arc<Checkpoint>,
    token: Option<Arc<str>>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn authorized(headers: &HeaderMap, token: &str) -> bool {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == token)
}

async fn score(State(st): State<AppState>, headers: HeaderMap, Json(req): Json<ScoreRequest>) -> Response {
    if let Some(token) = &st.token {
        if !authorized(&headers, token) {
            return error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token");
        }
    }
    let ck = st.checkpoint.clone();
    match tokio::task::spawn_blocking(move || score_request(&ck, &req)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

/// Routes: `POST /v1/score` and `GET /healthz`. When `token` is set every
/// scoring request must carry `Authorization: Bearer <token>`.
pub fn router(checkpoint: Arc<Checkpoint>, token: Option<String>) -> Router {
    let state = AppState {
        checkpoint,
        token: token.map(Arc::from),
    };
    Router::new()
        .route(SCORE_PATH, post(score))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread().enable_all().build()
}

/// Binds `addr` and serves until the process exits.
pub fn serve_blocking(checkpoint: Checkpoint, addr: SocketAddr, token: Option<String>) -> std::io::Result<()> {
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(Arc::new(checkpoint), token)).await
    })
}

/// A server on an ephemeral loopback port, running on its own thread until
/// dropped.
pub struct LoopbackServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl LoopbackServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Starts a server for `checkpoint` on `127.0.0.1:0`.
pub fn spawn_loopback(checkpoint: Checkpoint, token: Option<String>) -> std::io::Result<LoopbackServer> {
    let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(Arc::new(checkpoint), token);
    let thread = std::thread::spawn(move || {
        runtime()?.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(std_listener)?;
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    Ok(LoopbackServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
