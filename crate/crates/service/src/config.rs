//! Service configuration, read from TOML or JSON.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use scopevoice_core::dictation::{ListeningProfile, ProfileName};
use scopevoice_core::router::RemoteConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// Offline resolver; needs no network.
    #[default]
    Deterministic,
    /// Chat-completions endpoint from `[backend]`.
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    #[serde(default)]
    pub kind: BackendKind,
    #[serde(default = "default_url")]
    pub url: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_url() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}

fn default_model() -> String {
    "gpt-4".into()
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::default(),
            url: default_url(),
            model: default_model(),
            temperature: 0.0,
            timeout_ms: default_timeout_ms(),
        }
    }
}

impl BackendConfig {
    pub fn remote(&self) -> RemoteConfig {
        RemoteConfig {
            url: self.url.clone(),
            model: self.model.clone(),
            temperature: self.temperature,
            timeout_ms: self.timeout_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    /// One sub-directory per case, each holding `case.json`.
    #[serde(default = "default_cases_dir")]
    pub cases_dir: PathBuf,
    /// Where correction logs are kept; none means corrections live in memory.
    #[serde(default)]
    pub corrections_dir: Option<PathBuf>,
    /// Replacement for the bundled heuristic examples.
    #[serde(default)]
    pub examples: Option<PathBuf>,
    #[serde(default = "default_profile")]
    pub profile: ProfileName,
    #[serde(default)]
    pub backend: BackendConfig,
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_cases_dir() -> PathBuf {
    PathBuf::from("fixtures")
}

fn default_profile() -> ProfileName {
    ProfileName::Refined
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            cases_dir: default_cases_dir(),
            corrections_dir: None,
            examples: None,
            profile: default_profile(),
            backend: BackendConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads `path` as JSON when it ends in `.json`, TOML otherwise. Relative
    /// directories are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut cfg: ServiceConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?
        };
        if let Some(base) = path.parent() {
            let rebase = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            rebase(&mut cfg.cases_dir);
            cfg.corrections_dir.as_mut().map(rebase);
            cfg.examples.as_mut().map(rebase);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.backend.timeout_ms == 0 {
            return Err(ConfigError::Invalid("backend.timeout_ms must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.backend.temperature) {
            return Err(ConfigError::Invalid("backend.temperature must lie in 0..=2".into()));
        }
        self.listening_profile().validate().map_err(ConfigError::Invalid)
    }

    pub fn listening_profile(&self) -> ListeningProfile {
        ListeningProfile::named(self.profile)
    }
}
