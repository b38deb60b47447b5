//! The mock enhancer behind a local chat-completions endpoint.

use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::mock::MockVlm;
use crate::enhance::gateway::{ChatRequest, ChatResponse, GatewayError};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Answer the first `n` completions with 503 before serving normally.
    pub fail_first: usize,
}

struct Shared {
    mock: MockVlm,
    log: Mutex<Vec<ChatRequest>>,
    failures_left: AtomicUsize,
}

/// Handle to a running mock server. Dropping it shuts the server down.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to use as the gateway endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Every completion request received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.shared.log.lock().expect("log lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server stops, which only happens on shutdown.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop();
    }
}

async fn complete(State(shared): State<Arc<Shared>>, Json(request): Json<ChatRequest>) -> Response {
    shared.log.lock().expect("log lock").push(request.clone());
    let fail = shared
        .failures_left
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok();
    if fail {
        return (StatusCode::SERVICE_UNAVAILABLE, "injected failure").into_response();
    }
    match shared.mock.reply(&request) {
        Ok(text) => Json(ChatResponse::from_text(text)).into_response(),
        Err(GatewayError::Transient(m)) => (StatusCode::SERVICE_UNAVAILABLE, m).into_response(),
        Err(GatewayError::Permanent(m)) => (StatusCode::BAD_REQUEST, m).into_response(),
    }
}

pub fn serve_mock(mock: MockVlm, bind_addr: &str) -> Result<MockServer> {
    serve_mock_with(mock, bind_addr, ServeOptions::default())
}

pub fn serve_mock_with(
    mock: MockVlm,
    bind_addr: &str,
    options: ServeOptions,
) -> Result<MockServer> {
    let bind_err = |e: std::io::Error| Error::Gateway(format!("cannot bind {bind_addr}: {e}"));
    let listener = TcpListener::bind(bind_addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let shared = Arc::new(Shared {
        mock,
        log: Mutex::default(),
        failures_left: AtomicUsize::new(options.fail_first),
    });
    let app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/chat/completions", post(complete))
        .route("/v1/chat/completions", post(complete))
        .with_state(shared.clone());

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| Error::Gateway(format!("cannot start runtime: {e}")))?;
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("mock-vlm".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("mock server listener: {e}");
                        return;
                    }
                };
                let server = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = server.await {
                    log::error!("mock server: {e}");
                }
            });
        })
        .map_err(|e| Error::Gateway(format!("cannot spawn server thread: {e}")))?;
    Ok(MockServer {
        addr,
        shared,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
