use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::thread;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::{ErrorBody, Limits, RetrievalError, RetrieveRequest, SearchEngine};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("service runtime failed: {0}")]
    Runtime(std::io::Error),
}

#[derive(Clone)]
struct AppState {
    engine: Arc<SearchEngine>,
    limits: Limits,
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(ErrorBody { error: message })).into_response()
}

async fn retrieve(State(state): State<AppState>, body: Bytes) -> Response {
    let request: RetrieveRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed request body: {e}")),
    };
    let engine = Arc::clone(&state.engine);
    let limits = state.limits;
    // Scoring is CPU-bound; keep it off the async workers.
    let outcome = tokio::task::spawn_blocking(move || engine.handle_retrieve(&request, &limits)).await;
    match outcome {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(RetrievalError::InvalidRequest(msg))) => error_response(StatusCode::BAD_REQUEST, msg),
        Ok(Err(other)) => error_response(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        Err(join) => error_response(StatusCode::INTERNAL_SERVER_ERROR, join.to_string()),
    }
}

async fn health(State(state): State<AppState>) -> Response {
    Json(state.engine.health(&state.limits)).into_response()
}

pub fn router(engine: Arc<SearchEngine>, limits: Limits) -> Router {
    Router::new()
        .route("/retrieve", post(retrieve))
        .route("/health", get(health))
        .with_state(AppState { engine, limits })
}

/// A service running on a background thread. Dropping it shuts it down.
pub struct RunningService {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<Result<(), ServiceError>>>,
}

impl RunningService {
    /// Bind synchronously, then serve on a dedicated runtime thread.
    pub fn start(engine: Arc<SearchEngine>, limits: Limits, bind: &str) -> Result<Self, ServiceError> {
        let listener =
            TcpListener::bind(bind).map_err(|source| ServiceError::Bind { addr: bind.to_string(), source })?;
        listener.set_nonblocking(true).map_err(|source| ServiceError::Bind { addr: bind.to_string(), source })?;
        let addr = listener.local_addr().map_err(|source| ServiceError::Bind { addr: bind.to_string(), source })?;
        let (tx, rx) = oneshot::channel::<()>();
        let app = router(engine, limits);
        let thread = thread::Builder::new()
            .name("retrieval-service".into())
            .spawn(move || {
                let rt =
                    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(ServiceError::Runtime)?;
                rt.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).map_err(ServiceError::Runtime)?;
                    axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await
                        .map_err(ServiceError::Runtime)
                })
            })
            .map_err(ServiceError::Runtime)?;
        log::info!("retrieval service listening on {addr}");
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the service stops.
    pub fn wait(mut self) -> Result<(), ServiceError> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> Result<(), ServiceError> {
        self.stop()
    }

    fn stop(&mut self) -> Result<(), ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().unwrap_or(Ok(())),
            None => Ok(()),
        }
    }
}

impl Drop for RunningService {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}
