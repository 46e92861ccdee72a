use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use think3d_core::{CleaningPolicy, RenderOptions};

use super::recon::BridgeConfig;

pub const ENV_BRIDGE_URL: &str = "THINK3D_BRIDGE_URL";
pub const ENV_CACHE_DIR: &str = "THINK3D_CACHE_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    /// Reconstruct and view calls allowed per session.
    pub max_turns: usize,
    pub max_images: usize,
    pub render: RenderOptions,
    pub cleaning: CleaningPolicy,
    /// Include base64 PNG payloads in view results.
    pub inline_images: bool,
    pub bridge: BridgeConfig,
    pub cache_dir: Option<PathBuf>,
}

impl Default for ToolkitConfig {
    fn default() -> Self {
        Self {
            max_turns: 3,
            max_images: 32,
            render: RenderOptions::default(),
            cleaning: CleaningPolicy::default(),
            inline_images: true,
            bridge: BridgeConfig::default(),
            cache_dir: None,
        }
    }
}

impl ToolkitConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::Read { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| err(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Overrides bridge URL and cache dir from the environment.
    pub fn with_env(mut self) -> Self {
        self.apply_env(|k| std::env::var(k).ok());
        self
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(url) = get(ENV_BRIDGE_URL).filter(|s| !s.is_empty()) {
            self.bridge.url = Some(url);
        }
        if let Some(dir) = get(ENV_CACHE_DIR).filter(|s| !s.is_empty()) {
            self.cache_dir = Some(dir.into());
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_images == 0 {
            return Err(ConfigError::Invalid("max_images must be at least 1".into()));
        }
        self.render.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
