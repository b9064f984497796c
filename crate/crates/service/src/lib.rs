//! HTTP front end for restoration sessions.
//!
//! | Method | Path | |
//! |---|---|---|
//! | POST | `/sessions` | raw PNG/JPEG body, parameters as query string |
//! | GET | `/sessions/{id}` | handle, step states, artifact links |
//! | POST | `/sessions/{id}/steps/{step}` | optional JSON parameter overrides |
//! | GET | `/sessions/{id}/artifacts/{name}` | stored bytes |
//! | DELETE | `/sessions/{id}` | |
//! | GET | `/templates` | template names |

pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;

use handmend_core::backends::config::BackendConfig;
use handmend_core::backends::BackendError;
use handmend_core::pipeline::SetupError;
use handmend_core::Pipeline;

pub use config::ServiceConfig;
pub use error::ApiError;
pub use routes::router;
pub use state::AppState;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("backend config: {0}")]
    Backend(#[from] BackendError),
    #[error("pipeline setup: {0}")]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Loads the backends named by the config (mocks when none) and prepares the
/// artifact root.
pub fn build_state(config: ServiceConfig) -> Result<Arc<AppState>, ServeError> {
    let backend = match &config.backend_config {
        Some(path) => BackendConfig::load(path)?,
        None => BackendConfig::default(),
    };
    let pipeline = Pipeline::from_config(&backend)?;
    std::fs::create_dir_all(&config.artifact_root)?;
    Ok(Arc::new(AppState::new(pipeline, config)))
}

/// Serves until the listener fails, sweeping expired sessions meanwhile.
pub async fn run(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let period = (state.config.session_ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(period);
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    axum::serve(listener, router(state)).await
}
