//! Service configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use complyflow::engine::{EngineConfig, ModelKind};
use complyflow::stream::AlertPolicy;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Paths of model checkpoints to load at startup. `bundle_dir` is a
/// directory written by `complyctl train`; explicit entries override it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub bundle_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub svm: Option<PathBuf>,
    pub sequence: Option<PathBuf>,
    pub doc: Option<PathBuf>,
    pub policy: Option<PathBuf>,
}

impl ModelPaths {
    /// Explicit checkpoints in load order.
    pub fn explicit(&self) -> Vec<(ModelKind, &Path)> {
        [
            (ModelKind::Features, &self.features),
            (ModelKind::Svm, &self.svm),
            (ModelKind::Sequence, &self.sequence),
            (ModelKind::Doc, &self.doc),
            (ModelKind::Dqn, &self.policy),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_deref().map(|p| (k, p)))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    /// Persistent engine directory (WAL + snapshot). Unset runs in memory.
    pub wal_dir: Option<PathBuf>,
    /// Rule file loaded at startup when the engine has no rules yet.
    pub rules_path: Option<PathBuf>,
    /// Static bearer token required on every endpoint except health.
    pub token: Option<String>,
    pub models: ModelPaths,
    pub window_ms: i64,
    pub lateness_ms: i64,
    pub alert_policy: AlertPolicy,
    pub history_len: usize,
    pub queue_capacity: usize,
    pub snapshot_every: u64,
    /// Named seeds for anything the service trains or samples itself.
    pub seeds: BTreeMap<String, u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        let e = EngineConfig::default();
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            wal_dir: None,
            rules_path: None,
            token: None,
            models: ModelPaths::default(),
            window_ms: e.window_ms,
            lateness_ms: e.lateness_ms,
            alert_policy: e.alert_policy,
            history_len: e.history_len,
            queue_capacity: e.queue_capacity,
            snapshot_every: e.snapshot_every,
            seeds: BTreeMap::from([("train".to_owned(), 1)]),
        }
    }
}

impl ServerConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let config: ServerConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse { path: path.to_owned(), message: e.to_string() })?;
        config.engine().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(config)
    }

    pub fn engine(&self) -> EngineConfig {
        EngineConfig {
            history_len: self.history_len,
            queue_capacity: self.queue_capacity,
            window_ms: self.window_ms,
            lateness_ms: self.lateness_ms,
            alert_policy: self.alert_policy,
            snapshot_every: self.snapshot_every,
        }
    }

    pub fn seed(&self, name: &str) -> u64 {
        self.seeds.get(name).copied().unwrap_or(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_keys() {
        let c: ServerConfig = toml::from_str("port = 9000\n[alert_policy]\nscore_warn = 0.7\nscore_high = 0.9\nrate_threshold = 5\n").unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.window_ms, ServerConfig::default().window_ms);
        assert_eq!(c.engine().alert_policy.rate_threshold, 5);
        assert!(toml::from_str::<ServerConfig>("prot = 1").is_err());
    }
}
