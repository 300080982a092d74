use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::machine::Mode;
use super::query::QueryPool;
use super::ConfigError;
use crate::detector::DetectorConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub mode: Mode,
    pub verification_timeout_ms: u64,
    /// Relative paths resolve against the config file's directory.
    pub query_pool_path: Option<PathBuf>,
    pub detector: DetectorConfig,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Proactive,
            verification_timeout_ms: 10_000,
            query_pool_path: None,
            detector: DetectorConfig::default(),
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn reactive() -> Self {
        Self { mode: Mode::Reactive, ..Default::default() }
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(json);
        let config: EngineConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ConfigError::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let mut config = Self::from_json(&text)?;
        if let Some(pool) = &config.query_pool_path {
            if pool.is_relative() {
                let base = path.parent().unwrap_or_else(|| Path::new("."));
                config.query_pool_path = Some(base.join(pool));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.detector.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.verification_timeout_ms == 0 {
            return Err(ConfigError::Invalid("verification_timeout_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn query_pool(&self) -> Result<QueryPool, ConfigError> {
        match &self.query_pool_path {
            Some(p) => QueryPool::load(p),
            None => Ok(QueryPool::builtin()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c = EngineConfig::from_json(r#"{"mode": "reactive", "detector": {"boost_delta": 0.1}}"#).unwrap();
        assert_eq!(c.mode, Mode::Reactive);
        assert_eq!(c.verification_timeout_ms, 10_000);
        assert_eq!(c.detector.boost_delta, 0.1);
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let err = EngineConfig::from_json(r#"{"detector": {"bogus": 1}}"#).unwrap_err();
        match err {
            ConfigError::Schema { path, .. } => assert_eq!(path, "detector.bogus"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn relative_pool_path_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pool.json"), r#"{"queries": ["All okay?"]}"#).unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"query_pool_path": "pool.json"}"#).unwrap();
        let c = EngineConfig::load(&cfg).unwrap();
        assert_eq!(c.query_pool().unwrap().templates(), ["All okay?"]);
    }
}
