//! TOML configuration with one section per backend role.
//!
//! ```toml
//! [chat]
//! provider = "openai"
//! base_url = "http://localhost:8000/v1"
//! model_name = "llama-2-7b-chat"
//! api_key_env = "O2M_API_KEY"
//! timeout_ms = 30000
//! max_retries = 3
//!
//! [embed]
//! provider = "mock"
//! dim = 64
//! ```
//!
//! Roles: `chat`, `embed`, `nli` (required); `coherence`, `similarity`,
//! `scorer` (optional). Environment variables `O2M_<ROLE>_<FIELD>` (for
//! example `O2M_CHAT_BASE_URL`) override file values.

use super::mock::{HashEmbedder, OverlapNli, SyntheticChat};
use super::retry::RetryPolicy;
use super::{
    Backends, ChatBackend, ChatCoherence, EmbedBackend, EmbeddingCosine, HttpNli, HttpScorer, HttpSimilarity,
    NliBackend, OpenAiChat, OpenAiEmbed,
};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    #[default]
    OpenAi,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub provider: Provider,
    pub base_url: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the bearer key. The key
    /// itself never appears in configuration.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    /// Embedding dimension (embed role).
    pub dim: Option<usize>,
    /// Seed of mock providers.
    pub seed: u64,
    /// Marker tokens with dedicated axes (mock embedder).
    pub markers: Vec<String>,
    pub marker_weight: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            provider: Provider::OpenAi,
            base_url: None,
            model_name: String::new(),
            api_key_env: "O2M_API_KEY".into(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_ms: 250,
            max_in_flight: 4,
            dim: None,
            seed: 0,
            markers: Vec::new(),
            marker_weight: 3.0,
        }
    }
}

impl BackendConfig {
    pub fn mock() -> Self {
        Self { provider: Provider::Mock, ..Self::default() }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_ms),
            ..RetryPolicy::default()
        }
    }

    fn apply_env(&mut self, role: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let key = |field: &str| format!("O2M_{}_{}", role.to_ascii_uppercase(), field);
        let parse_num = |field: &str, v: String| -> Result<u64, ConfigError> {
            v.trim().parse().map_err(|_| ConfigError::Invalid(format!("{} must be a non-negative integer", key(field))))
        };
        if let Some(v) = lookup(&key("PROVIDER")) {
            self.provider = match v.trim().to_ascii_lowercase().as_str() {
                "openai" => Provider::OpenAi,
                "mock" => Provider::Mock,
                other => return Err(ConfigError::Invalid(format!("{} has unknown provider {other:?}", key("PROVIDER")))),
            };
        }
        if let Some(v) = lookup(&key("BASE_URL")) {
            self.base_url = Some(v);
        }
        if let Some(v) = lookup(&key("MODEL_NAME")) {
            self.model_name = v;
        }
        if let Some(v) = lookup(&key("API_KEY_ENV")) {
            self.api_key_env = v;
        }
        if let Some(v) = lookup(&key("TIMEOUT_MS")) {
            self.timeout_ms = parse_num("TIMEOUT_MS", v)?;
        }
        if let Some(v) = lookup(&key("MAX_RETRIES")) {
            self.max_retries = parse_num("MAX_RETRIES", v)? as u32;
        }
        Ok(())
    }

    fn validate(&self, role: &str) -> Result<(), ConfigError> {
        if self.provider == Provider::OpenAi && self.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(ConfigError::Invalid(format!("[{role}] needs base_url for provider \"openai\"")));
        }
        if self.max_in_flight == 0 {
            return Err(ConfigError::Invalid(format!("[{role}] max_in_flight must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    pub chat: BackendConfig,
    pub embed: BackendConfig,
    pub nli: BackendConfig,
    #[serde(default)]
    pub coherence: Option<BackendConfig>,
    #[serde(default)]
    pub similarity: Option<BackendConfig>,
    #[serde(default)]
    pub scorer: Option<BackendConfig>,
}

impl BackendsConfig {
    /// All-mock configuration.
    pub fn mock(seed: u64) -> Self {
        let m = BackendConfig { seed, ..BackendConfig::mock() };
        Self { chat: m.clone(), embed: m.clone(), nli: m, coherence: None, similarity: None, scorer: None }
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    /// Reads the file and applies process environment overrides.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        cfg.apply_env(&|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, lookup: &dyn Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        self.chat.apply_env("chat", lookup)?;
        self.embed.apply_env("embed", lookup)?;
        self.nli.apply_env("nli", lookup)?;
        for (role, section) in [
            ("coherence", &mut self.coherence),
            ("similarity", &mut self.similarity),
            ("scorer", &mut self.scorer),
        ] {
            let prefix = format!("O2M_{}_", role.to_ascii_uppercase());
            let touched = ["PROVIDER", "BASE_URL", "MODEL_NAME", "API_KEY_ENV", "TIMEOUT_MS", "MAX_RETRIES"]
                .iter()
                .any(|f| lookup(&format!("{prefix}{f}")).is_some());
            if section.is_none() && touched {
                *section = Some(BackendConfig::default());
            }
            if let Some(s) = section {
                s.apply_env(role, lookup)?;
            }
        }
        Ok(())
    }

    fn chat_for(cfg: &BackendConfig) -> Result<Arc<dyn ChatBackend>, ConfigError> {
        Ok(match cfg.provider {
            Provider::OpenAi => Arc::new(OpenAiChat::new(cfg).map_err(|e| ConfigError::Invalid(e.to_string()))?),
            Provider::Mock => Arc::new(SyntheticChat::new(cfg.seed)),
        })
    }

    pub fn build(&self) -> Result<Backends, ConfigError> {
        let invalid = |e: super::BackendError| ConfigError::Invalid(e.to_string());
        self.chat.validate("chat")?;
        self.embed.validate("embed")?;
        self.nli.validate("nli")?;
        let chat = Self::chat_for(&self.chat)?;
        let embed: Arc<dyn EmbedBackend> = match self.embed.provider {
            Provider::OpenAi => Arc::new(OpenAiEmbed::new(&self.embed).map_err(invalid)?),
            Provider::Mock => {
                let dim = self.embed.dim.unwrap_or(64);
                if self.embed.markers.len() >= dim {
                    return Err(ConfigError::Invalid("[embed] dim must exceed the number of markers".into()));
                }
                Arc::new(HashEmbedder::new(dim).with_markers(&self.embed.markers, self.embed.marker_weight))
            }
        };
        let nli: Arc<dyn NliBackend> = match self.nli.provider {
            Provider::OpenAi => Arc::new(HttpNli::new(&self.nli).map_err(invalid)?),
            Provider::Mock => Arc::new(OverlapNli::default()),
        };
        let mut backends = Backends::new(chat, embed.clone(), nli);
        if let Some(cfg) = &self.coherence {
            cfg.validate("coherence")?;
            backends = backends.with_coherence(Arc::new(ChatCoherence::new(Self::chat_for(cfg)?)));
        }
        if let Some(cfg) = &self.similarity {
            cfg.validate("similarity")?;
            backends = match cfg.provider {
                Provider::OpenAi => backends.with_similarity(Arc::new(HttpSimilarity::new(cfg).map_err(invalid)?)),
                Provider::Mock => backends.with_similarity(Arc::new(EmbeddingCosine::new(embed))),
            };
        }
        if let Some(cfg) = &self.scorer {
            cfg.validate("scorer")?;
            match cfg.provider {
                Provider::OpenAi => backends = backends.with_scorer(Arc::new(HttpScorer::new(cfg).map_err(invalid)?)),
                Provider::Mock => return Err(ConfigError::Invalid("[scorer] has no mock provider".into())),
            }
        }
        Ok(backends)
    }
}
