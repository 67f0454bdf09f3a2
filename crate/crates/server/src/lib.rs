//! Network and terminal surface of the bazaar assistant.

pub mod config;
pub mod error;
pub mod http;
pub mod hub;
pub mod repl;

use std::sync::Arc;
use std::time::Duration;

use bazaar_core::agent::Agent;
use bazaar_core::tools::builtin_registry;
use chrono::Utc;
use tokio::net::TcpListener;

use config::{build_backend, Config, ConfigError};
use http::{router, AppState};
use hub::Hub;

/// Wires store, tools, knowledge base and model backend per `config`.
pub fn build_agent(config: &Config) -> Result<Agent, ConfigError> {
    let store = Arc::new(config.open_store()?);
    let knowledge = config.knowledge()?;
    let tools = Arc::new(builtin_registry(knowledge.is_some()));
    let backend = build_backend(&config.backend)?;
    let agent = Agent::new(store, tools, backend, config.agent_config());
    Ok(match knowledge {
        Some(kb) => agent.with_knowledge(Arc::new(kb)),
        None => agent,
    })
}

/// Starts the periodic idle-session purge for `hub`.
pub fn spawn_purger(hub: Arc<Hub>, config: &Config) -> tokio::task::JoinHandle<()> {
    let every = Duration::from_secs(config.purge_interval);
    let ttl = config.ttl();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.tick().await;
        loop {
            tick.tick().await;
            let hub = hub.clone();
            let _ = tokio::task::spawn_blocking(move || hub.purge_idle(Utc::now(), ttl)).await;
        }
    })
}

/// Serves on an already bound listener until `shutdown` resolves.
pub async fn serve_on(
    listener: TcpListener,
    agent: Agent,
    config: &Config,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let hub = Arc::new(Hub::new(agent));
    let purger = spawn_purger(hub.clone(), config);
    let app = router(AppState {
        hub,
        async_turns: config.async_turns,
    });
    tracing::info!(addr = %listener.local_addr()?, "listening");
    let result = axum::serve(listener, app).with_graceful_shutdown(shutdown).await;
    purger.abort();
    result
}
