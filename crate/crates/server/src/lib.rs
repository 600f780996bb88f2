//! The processing server: module registry, job queue, assistant proxy and
//! the REST API over the annotation store.

pub mod api;
pub mod assistant;
pub mod cml;
pub mod jobs;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use discover_core::storage::Store;
use thiserror::Error;
use tokio::net::TcpListener;

use crate::api::AppState;
use crate::assistant::{Assistant, AssistantConfig, AssistantError, ProviderConfig};
use crate::jobs::{JobError, JobQueue, SystemClock};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Storage(#[from] discover_core::storage::StorageError),
    #[error(transparent)]
    Jobs(#[from] JobError),
    #[error(transparent)]
    Assistant(#[from] AssistantError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    pub token: Option<String>,
    /// TOML provider list; without one a single `stub` provider is offered.
    pub assistant_config: Option<PathBuf>,
    /// Runs the `cml.*` modules in-process.
    pub builtin_worker: bool,
    /// Static files (a browser client) served under `/`.
    pub static_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            token: None,
            assistant_config: None,
            builtin_worker: true,
            static_dir: None,
        }
    }
}

/// Opens the store and the journalled queue under `data_dir` and registers
/// the built-in modules.
pub fn build_state(config: &ServerConfig) -> Result<AppState, ServerError> {
    std::fs::create_dir_all(&config.data_dir)?;
    let store = Arc::new(Store::open_dir(&config.data_dir)?);
    let journal = config.data_dir.join(".jobs").join("journal.jsonl");
    let queue = Arc::new(JobQueue::open(store.clone(), Arc::new(SystemClock), journal)?);
    cml::register(&queue)?;
    let assistant_config = match &config.assistant_config {
        Some(path) => AssistantConfig::load(path)?,
        None => AssistantConfig {
            providers: vec![ProviderConfig::stub("stub")],
        },
    };
    Ok(AppState {
        store,
        queue,
        assistant: Arc::new(Assistant::new(assistant_config)?),
        token: config.token.as_deref().map(Arc::from),
        static_dir: config.static_dir.clone(),
    })
}

/// Serves `state` on `listener` until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    builtin_worker: bool,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    let stop = Arc::new(AtomicBool::new(false));
    let worker = builtin_worker.then(|| cml::spawn_worker(state.queue.clone(), stop.clone(), Duration::from_millis(50)));
    let result = axum::serve(listener, api::router(state)).with_graceful_shutdown(shutdown).await;
    stop.store(true, Ordering::SeqCst);
    if let Some(w) = worker {
        let _ = tokio::task::spawn_blocking(move || w.join()).await;
    }
    Ok(result?)
}

/// Binds `config.bind` and serves until ctrl-c.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let state = build_state(&config)?;
    let listener = TcpListener::bind(config.bind).await?;
    serve_on(listener, state, config.builtin_worker, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}
