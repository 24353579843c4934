//! HTTP front for a mock model.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use llmimage::mock::MockApi;
use llmimage::{Error, ErrorClass, Result};
use serde::Deserialize;
use tokio::sync::{oneshot, Mutex};
use tokio::time::Instant;

use crate::openai;
use crate::wire::{CapabilityDescriptor, ErrorBody, QueryRequest, QueryResponse};

#[derive(Clone, Debug, Default)]
pub struct ServerOptions {
    /// Pace `/v1/query` answers to at most this many per second.
    pub rate_limit: Option<f64>,
    /// Require `Authorization: Bearer <token>` on every API route.
    pub auth_token: Option<String>,
    /// Answer the first `n` queries with 503, to rehearse client retries.
    pub inject_failures: u32,
    pub worker_threads: Option<usize>,
}

struct AppState {
    api: Arc<MockApi>,
    caps: CapabilityDescriptor,
    opts: ServerOptions,
    next_slot: Mutex<Instant>,
    failures_left: AtomicU32,
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits (it only does so on error or shutdown).
    pub fn wait(mut self) -> Result<()> {
        self.join()
    }

    pub fn shutdown(mut self) -> Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join()
    }

    fn join(&mut self) -> Result<()> {
        match self.thread.take().map(JoinHandle::join) {
            Some(Ok(r)) => r.map_err(|e| Error::Transport(format!("server: {e}"))),
            Some(Err(_)) => Err(Error::Transport("server thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.join();
    }
}

/// Binds `bind` (e.g. `127.0.0.1:0`) and serves `api` on a background runtime.
pub fn serve(api: Arc<MockApi>, bind: &str, opts: ServerOptions) -> Result<ServerHandle> {
    let listener =
        std::net::TcpListener::bind(bind).map_err(|e| Error::Transport(format!("cannot bind {bind}: {e}")))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;

    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = opts.worker_threads {
        rt.worker_threads(n.max(1));
    }
    let rt = rt.enable_all().build()?;

    let caps = api.model().capabilities().into();
    let state = Arc::new(AppState {
        api,
        caps,
        failures_left: AtomicU32::new(opts.inject_failures),
        opts,
        next_slot: Mutex::new(Instant::now()),
    });
    let app = router(state);
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("llmimage-server".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
            })
        })?;
    tracing::info!(%addr, "serving");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/v1/capabilities", get(capabilities))
        .route("/v1/query", post(query))
        .route("/v1/chat/completions", post(chat_completions))
        .with_state(state)
}

fn error_response(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    let body = ErrorBody {
        code: code.into(),
        message: message.into(),
    };
    (status, Json(body)).into_response()
}

fn api_error(e: &Error) -> Response {
    match (e.wire_code(), e.class()) {
        (Some(code), _) => error_response(StatusCode::BAD_REQUEST, code, e.to_string()),
        (None, ErrorClass::Validation) => error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()),
        _ => error_response(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

/// Auth, pacing and fault injection shared by the query routes.
async fn admit(s: &AppState, headers: &HeaderMap) -> Option<Response> {
    if let Err(r) = check_auth(s, headers) {
        return Some(r);
    }
    if let Some(rate) = s.opts.rate_limit.filter(|r| *r > 0.0) {
        let interval = Duration::from_secs_f64(1.0 / rate);
        let slot = {
            let mut next = s.next_slot.lock().await;
            let slot = (*next).max(Instant::now());
            *next = slot + interval;
            slot
        };
        tokio::time::sleep_until(slot).await;
    }
    let injected = s
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    injected.then(|| error_response(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "injected failure"))
}

fn check_auth(s: &AppState, headers: &HeaderMap) -> std::result::Result<(), Response> {
    let Some(token) = &s.opts.auth_token else {
        return Ok(());
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|h| h.to_str().ok())
        .and_then(|h| h.strip_prefix("Bearer "));
    if given == Some(token.as_str()) {
        Ok(())
    } else {
        Err(error_response(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token"))
    }
}

async fn capabilities(State(s): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    match check_auth(&s, &headers) {
        Ok(()) => Json(s.caps.clone()).into_response(),
        Err(r) => r,
    }
}

fn parse_body<'a, T: Deserialize<'a>>(body: &'a [u8]) -> std::result::Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| error_response(StatusCode::BAD_REQUEST, "bad_request", e.to_string()))
}

async fn query(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(r) = admit(&s, &headers).await {
        return r;
    }
    let req: QueryRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let result = req
        .bias()
        .and_then(|bias| s.api.query_with_echo(&req.context, &bias, req.top_logprobs, req.echo_replica));
    match result {
        Ok(r) => Json(QueryResponse::from_top_k(s.api.model().model_id(), &r)).into_response(),
        Err(e) => api_error(&e),
    }
}

async fn chat_completions(State(s): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Response {
    if let Some(r) = admit(&s, &headers).await {
        return r;
    }
    let req: openai::ChatRequest = match parse_body(&body) {
        Ok(r) => r,
        Err(r) => return r,
    };
    let result = req
        .into_native()
        .and_then(|(context, bias, k)| s.api.query_with_echo(&context, &bias, k, false));
    match result {
        Ok(r) => Json(openai::chat_response(s.api.model().model_id(), &r)).into_response(),
        Err(e) => api_error(&e),
    }
}
