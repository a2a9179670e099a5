//! HTTP service over a persona workspace. Every route lives under `/v1`;
//! `/openapi.json` and `/healthz` sit at the root.

mod error;
mod openapi;
mod routes;

use std::collections::{HashMap, HashSet};
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::http::{HeaderValue, Method};
use axum::Router;
use parking_lot::Mutex;
use persona_core::{ChatSession, Workspace};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::{ApiError, ApiResult, ErrorBody};
pub use openapi::{openapi_document, ROUTES};
pub use routes::{RunState, RunStatus};

/// Shared service state: the workspace plus in-memory run and session registries.
pub struct AppState {
    pub workspace: Workspace,
    runs: Mutex<HashMap<String, RunStatus>>,
    training: Mutex<HashSet<String>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<ChatSession>>>>,
}

impl AppState {
    pub fn new(workspace: Workspace) -> Arc<Self> {
        Arc::new(AppState {
            workspace,
            runs: Mutex::new(HashMap::new()),
            training: Mutex::new(HashSet::new()),
            sessions: Mutex::new(HashMap::new()),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let server = &state.workspace.config.server;
    let mut app = routes::routes()
        .layer(DefaultBodyLimit::max(server.body_limit_bytes))
        .with_state(state.clone());
    if !server.cors_allowlist.is_empty() {
        let origins: Vec<HeaderValue> = server
            .cors_allowlist
            .iter()
            .filter_map(|o| match HeaderValue::from_str(o) {
                Ok(v) => Some(v),
                Err(_) => {
                    tracing::warn!(origin = %o, "ignoring malformed CORS origin");
                    None
                }
            })
            .collect();
        app = app.layer(
            CorsLayer::new()
                .allow_origin(AllowOrigin::list(origins))
                .allow_methods([Method::GET, Method::POST, Method::DELETE])
                .allow_headers([axum::http::header::CONTENT_TYPE]),
        );
    }
    app
}

/// Fails unless the store root exists (or can be created) and is writable.
pub fn check_store_root(workspace: &Workspace) -> io::Result<()> {
    let root = &workspace.config.store_root;
    std::fs::create_dir_all(root)?;
    let probe = root.join(format!(".write-probe-{}", std::process::id()));
    std::fs::write(&probe, b"ok")?;
    std::fs::remove_file(&probe)
}

/// Binds the configured address and serves until Ctrl-C.
pub async fn serve(workspace: Workspace) -> io::Result<()> {
    check_store_root(&workspace)?;
    let addr: SocketAddr = workspace
        .config
        .server
        .bind
        .parse()
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, format!("bind address: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::new(workspace)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
