//! HTTP service, closed-loop load bench and `complyctl` command line for the
//! complyflow engine.

pub mod api;
pub mod bench;
pub mod cli;
pub mod config;
pub mod sysstat;

use std::future::Future;

use complyflow::engine::{Engine, EngineError, ModelBundle};
use thiserror::Error;

pub use api::{router, AppState, Shared};
pub use config::ServerConfig;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("rules file {path}: {source}")]
    RulesFile { path: String, source: std::io::Error },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Opens (or recovers) the engine, then applies the configured rules and models.
pub fn build_engine(config: &ServerConfig) -> Result<Engine, ServerError> {
    let mut engine = match &config.wal_dir {
        Some(dir) => Engine::open(dir, config.engine())?,
        None => Engine::in_memory(config.engine())?,
    };
    if let Some(path) = &config.rules_path {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ServerError::RulesFile { path: path.display().to_string(), source })?;
        if engine.state().rules_text.as_deref() != Some(text.as_str()) {
            let n = engine.load_rules(&text)?;
            log::info!("loaded {n} rules from {}", path.display());
        }
    }
    let m = &config.models;
    let mut bundle = match &m.bundle_dir {
        Some(dir) => ModelBundle::load_dir(dir)?,
        None => ModelBundle::default(),
    };
    for (kind, path) in m.explicit() {
        bundle.load(kind, path)?;
    }
    engine.set_models(bundle)?;
    let rescored = engine.rescore_parked()?;
    if rescored > 0 {
        log::info!("rescored {rescored} parked cases");
    }
    Ok(engine)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServerError> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await?;
    Ok(())
}
