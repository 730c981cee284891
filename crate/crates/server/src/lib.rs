//! The filter service: REST API, background jobs, comment ingestion and
//! moderation actions, over a SQLite store.

pub mod config;
pub mod error;
pub mod ingest;
pub mod jobs;
pub mod moderation;
pub mod routes;
pub mod scheduler;
pub mod service;

use std::net::SocketAddr;
use std::sync::Arc;

use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use sieve_core::store::Store;

pub use config::ServiceConfig;
pub use error::{AppError, AppResult};
pub use service::{Service, ServiceOptions};

use moderation::LoggingSink;

/// Opens the store and backend named by `config`.
pub fn build_service(config: &ServiceConfig) -> Result<Arc<Service>, String> {
    let store = Store::open(&config.db).map_err(|e| format!("{}: {e}", config.db.display()))?;
    let gateway = config.backend.build(config.max_concurrency)?;
    Service::new(
        Arc::new(store),
        Arc::new(gateway),
        Arc::new(LoggingSink::new()),
        ServiceOptions {
            eval_seed: config.eval_seed,
            templates: config.templates.clone(),
        },
    )
    .map_err(|e| e.to_string())
}

pub fn app(service: Arc<Service>, config: &ServiceConfig) -> axum::Router {
    let router = routes::router(service);
    match &config.static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router,
    }
}

/// A started server.
pub struct Running {
    pub addr: SocketAddr,
    pub service: Arc<Service>,
    stop: oneshot::Sender<()>,
    server: JoinHandle<std::io::Result<()>>,
    pollers: Vec<JoinHandle<()>>,
}

impl Running {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting requests and polling, then waits for the listener.
    pub async fn shutdown(self) -> std::io::Result<()> {
        for p in &self.pollers {
            p.abort();
        }
        let _ = self.stop.send(());
        self.server.await.map_err(std::io::Error::other)?
    }
}

/// Binds, ingests configured files and starts pollers. Port 0 picks a free port.
pub async fn start(config: ServiceConfig) -> Result<Running, String> {
    let service = build_service(&config)?;
    let listener = tokio::net::TcpListener::bind((config.bind.as_str(), config.port))
        .await
        .map_err(|e| format!("bind {}:{}: {e}", config.bind, config.port))?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let app = app(service.clone(), &config);
    let (stop, stopped) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    let pollers = scheduler::start(service.clone(), &config.sources).await;
    tracing::info!(%addr, backend = service.gateway().backend_name(), "listening");
    Ok(Running {
        addr,
        service,
        stop,
        server,
        pollers,
    })
}

/// Runs until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), String> {
    let running = start(config).await?;
    tokio::signal::ctrl_c().await.map_err(|e| e.to_string())?;
    tracing::info!("shutting down");
    running.shutdown().await.map_err(|e| e.to_string())
}
