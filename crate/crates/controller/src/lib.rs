//! Controller service: projects, gyms, engine configs, jobs with
//! append-only event logs, SSE streaming, worker launch and the catalog.

pub mod analytics_api;
pub mod api;
pub mod error;
pub mod launcher;
pub mod model;
pub mod service;
pub mod store;
pub mod worker;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

pub use error::ApiError;
pub use service::Controller;

/// Largest accepted event payload, in bytes of JSON.
pub const PAYLOAD_CAP: usize = 256 * 1024;

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub db_path: PathBuf,
    pub bind_addr: String,
    pub shared_pool_size: usize,
    /// Bearer token to principal.
    pub user_tokens: HashMap<String, String>,
    pub heartbeat_timeout: Duration,
    pub watchdog_interval: Duration,
    pub keep_alive: Duration,
    /// URL workers use to reach the controller. Defaults to the bound address.
    pub public_url: Option<String>,
}

impl ControllerConfig {
    pub fn new(db_path: impl Into<PathBuf>) -> ControllerConfig {
        ControllerConfig {
            db_path: db_path.into(),
            bind_addr: "127.0.0.1:8080".into(),
            shared_pool_size: 2,
            user_tokens: HashMap::from([("dev-token".to_string(), "dev".to_string())]),
            heartbeat_timeout: Duration::from_secs(60),
            watchdog_interval: Duration::from_secs(5),
            keep_alive: Duration::from_secs(15),
            public_url: None,
        }
    }

    /// Reads `AUTODO_DB_PATH`, `AUTODO_BIND_ADDR`, `AUTODO_SHARED_POOL_SIZE`,
    /// `AUTODO_USER_TOKENS` (`token=principal` pairs separated by commas)
    /// and `AUTODO_PUBLIC_URL`.
    pub fn from_env() -> Result<ControllerConfig, String> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let mut c = ControllerConfig::new(var("AUTODO_DB_PATH").unwrap_or_else(|| "autodo.db".into()));
        if let Some(addr) = var("AUTODO_BIND_ADDR") {
            c.bind_addr = addr;
        }
        if let Some(n) = var("AUTODO_SHARED_POOL_SIZE") {
            c.shared_pool_size = n
                .trim()
                .parse()
                .map_err(|_| format!("AUTODO_SHARED_POOL_SIZE must be a number, got `{n}`"))?;
        }
        if let Some(tokens) = var("AUTODO_USER_TOKENS") {
            c.user_tokens = parse_tokens(&tokens)?;
        }
        c.public_url = var("AUTODO_PUBLIC_URL");
        Ok(c)
    }
}

pub fn parse_tokens(s: &str) -> Result<HashMap<String, String>, String> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (token, principal) = pair
                .split_once('=')
                .ok_or_else(|| format!("expected token=principal, got `{pair}`"))?;
            Ok((token.trim().to_string(), principal.trim().to_string()))
        })
        .collect()
}

/// A bound, running controller.
pub struct Running {
    pub addr: SocketAddr,
    pub controller: Arc<Controller>,
    pub server: tokio::task::JoinHandle<()>,
}

impl Running {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

/// Binds the listener, starts the heartbeat watchdog and serves in a
/// background task.
pub async fn start(config: ControllerConfig) -> Result<Running, ApiError> {
    let listener = tokio::net::TcpListener::bind(&config.bind_addr)
        .await
        .map_err(|e| ApiError::Internal(format!("bind {}: {e}", config.bind_addr)))?;
    let addr = listener.local_addr().map_err(|e| ApiError::Internal(e.to_string()))?;
    let controller = Arc::new(Controller::new(config)?);
    controller.set_public_url(format!("http://{addr}"));

    let watchdog = Arc::clone(&controller);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(watchdog.config.watchdog_interval);
        loop {
            tick.tick().await;
            for id in watchdog.sweep(watchdog.config.heartbeat_timeout) {
                tracing::warn!(job = %id, "failed after heartbeat loss");
            }
        }
    });

    let app = api::router(Arc::clone(&controller));
    let server = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok(Running {
        addr,
        controller,
        server,
    })
}
