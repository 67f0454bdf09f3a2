use std::path::{Path, PathBuf};
use std::sync::Arc;

use bazaar_core::agent::{AgentConfig, ConfirmPolicy};
use bazaar_core::llm::{ChatBackend, RemoteBackend, RemoteConfig, ReplayBackend, ScriptedBackend};
use bazaar_core::marketplace::{Store, StoreConfig};
use bazaar_core::memory::{DEFAULT_OBSERVATION_CHAR_LIMIT, DEFAULT_SESSION_TTL_SECS};
use bazaar_core::tools::KnowledgeIndex;
use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend: {0}")]
    Backend(#[from] bazaar_core::llm::LlmError),
    #[error("store: {0}")]
    Store(#[from] bazaar_core::marketplace::MarketError),
    #[error("knowledge base: {0}")]
    Knowledge(#[from] bazaar_core::tools::KnowledgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub script_path: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model: None,
            script_path: None,
            cache_dir: None,
            api_key_env: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Temperatures {
    pub agent: f32,
    pub simulator: f32,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            agent: bazaar_core::llm::AGENT_TEMPERATURE,
            simulator: bazaar_core::llm::SIMULATOR_TEMPERATURE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: String,
    /// Idle seconds before a session is purged.
    pub session_ttl: u64,
    /// Seconds between purge sweeps.
    pub purge_interval: u64,
    pub renewal_period_days: i64,
    pub confirm_policy: ConfirmPolicy,
    pub observation_char_limit: usize,
    /// Respond to turn requests before the agent has finished.
    pub async_turns: bool,
    pub store_dir: Option<PathBuf>,
    pub kb_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub temperatures: Temperatures,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: "127.0.0.1:8080".into(),
            session_ttl: DEFAULT_SESSION_TTL_SECS as u64,
            purge_interval: 60,
            renewal_period_days: bazaar_core::marketplace::DEFAULT_RENEWAL_DAYS,
            confirm_policy: ConfirmPolicy::MutatingOnly,
            observation_char_limit: DEFAULT_OBSERVATION_CHAR_LIMIT,
            async_turns: false,
            store_dir: None,
            kb_dir: None,
            backend: BackendConfig::default(),
            temperatures: Temperatures::default(),
        }
    }
}

impl Config {
    /// Reads a TOML file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: Config = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut Option<PathBuf>| {
            if let Some(inner) = p {
                if inner.is_relative() {
                    *inner = base.join(&*inner);
                }
            }
        };
        rebase(&mut config.store_dir);
        rebase(&mut config.kb_dir);
        rebase(&mut config.backend.script_path);
        rebase(&mut config.backend.cache_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.session_ttl == 0 {
            return Err(ConfigError::Invalid("session_ttl must be positive".into()));
        }
        if self.purge_interval == 0 {
            return Err(ConfigError::Invalid("purge_interval must be positive".into()));
        }
        if self.renewal_period_days <= 0 {
            return Err(ConfigError::Invalid("renewal_period_days must be positive".into()));
        }
        if self.observation_char_limit < 32 {
            return Err(ConfigError::Invalid("observation_char_limit is too small".into()));
        }
        Ok(())
    }

    pub fn ttl(&self) -> Duration {
        Duration::seconds(self.session_ttl as i64)
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            confirm_policy: self.confirm_policy,
            temperature: self.temperatures.agent,
            observation_char_limit: self.observation_char_limit,
            ..AgentConfig::default()
        }
    }

    pub fn open_store(&self) -> Result<Store, ConfigError> {
        let config = StoreConfig {
            renewal_period: Duration::days(self.renewal_period_days),
            persist_dir: None,
            snapshot_on_write: true,
        };
        Ok(match &self.store_dir {
            Some(dir) => Store::open(dir, config)?,
            None => Store::new(config),
        })
    }

    pub fn knowledge(&self) -> Result<Option<KnowledgeIndex>, ConfigError> {
        match &self.kb_dir {
            Some(dir) => Ok(Some(KnowledgeIndex::ingest_dir(dir)?)),
            None => Ok(None),
        }
    }
}

fn remote(config: &BackendConfig) -> Result<RemoteBackend, ConfigError> {
    let endpoint = config
        .endpoint
        .clone()
        .ok_or_else(|| ConfigError::Invalid("backend.endpoint is required for remote backends".into()))?;
    Ok(RemoteBackend::new(RemoteConfig {
        endpoint,
        model: config.model.clone().unwrap_or_else(|| "default".into()),
        api_key_env: config.api_key_env.clone(),
        timeout_secs: config.timeout_secs,
    }))
}

pub fn build_backend(config: &BackendConfig) -> Result<Arc<dyn ChatBackend>, ConfigError> {
    Ok(match config.kind {
        BackendKind::Scripted => {
            let path = config
                .script_path
                .as_ref()
                .ok_or_else(|| ConfigError::Invalid("backend.script_path is required for scripted backends".into()))?;
            Arc::new(ScriptedBackend::from_file(path)?)
        }
        BackendKind::Remote => Arc::new(remote(config)?),
        BackendKind::Replay => {
            let dir = config
                .cache_dir
                .clone()
                .ok_or_else(|| ConfigError::Invalid("backend.cache_dir is required for replay backends".into()))?;
            // with an endpoint, misses are recorded; without one they fail
            let inner: Option<Arc<dyn ChatBackend>> = match config.endpoint {
                Some(_) => Some(Arc::new(remote(config)?)),
                None => None,
            };
            Arc::new(ReplayBackend::new(dir, inner))
        }
    })
}
