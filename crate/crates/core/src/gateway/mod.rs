//! Uniform access to decision makers: a remote chat-completions client and a
//! scripted agent, behind a shared cache and concurrency limit.

mod remote;
mod scripted;

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::{OnceCell, Semaphore};

use crate::protocol::{ChatMessage, PromptSpec};
use crate::seed;

pub use remote::{extract_action_probs, RemoteBackend, API_KEY_ENV};
pub use scripted::{logistic, scripted_decide, AgentMode, ScriptedAgent, ScriptedBackend};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed response: {0}")]
    BadResponse(String),
    #[error("cache error: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Scripted,
}

fn default_temperature() -> f64 {
    0.6
}
fn default_max_concurrent() -> usize {
    4
}
fn default_retry_budget() -> u32 {
    3
}
fn default_timeout_secs() -> u64 {
    60
}
fn default_backoff_base_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backend: BackendKind,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Scripted agent JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<PathBuf>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub request_logprobs: bool,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default = "default_retry_budget")]
    pub retry_budget: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

impl ModelConfig {
    pub fn scripted(model_id: impl Into<String>, agent: impl Into<PathBuf>) -> Self {
        Self::base(BackendKind::Scripted, model_id.into(), None, Some(agent.into()))
    }

    pub fn remote(model_id: impl Into<String>, endpoint_url: impl Into<String>) -> Self {
        Self::base(BackendKind::Remote, model_id.into(), Some(endpoint_url.into()), None)
    }

    fn base(backend: BackendKind, model_id: String, endpoint_url: Option<String>, agent: Option<PathBuf>) -> Self {
        Self {
            backend,
            model_id,
            endpoint_url,
            agent,
            temperature: default_temperature(),
            request_logprobs: false,
            max_concurrent: default_max_concurrent(),
            retry_budget: default_retry_budget(),
            timeout_secs: default_timeout_secs(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::Config("model_id is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.max_concurrent == 0 {
            return Err(GatewayError::Config("max_concurrent must be at least 1".into()));
        }
        match self.backend {
            BackendKind::Remote if self.endpoint_url.is_none() => {
                Err(GatewayError::Config(format!("model {} has no endpoint_url", self.model_id)))
            }
            BackendKind::Scripted if self.agent.is_none() => {
                Err(GatewayError::Config(format!("model {} has no agent file", self.model_id)))
            }
            _ => Ok(()),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

/// Normalized (buy, sell) probability pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionProbs {
    pub p_buy: f64,
    pub p_sell: f64,
}

impl ActionProbs {
    pub fn new(p_buy: f64) -> Self {
        let p_buy = p_buy.clamp(0.0, 1.0);
        Self { p_buy, p_sell: 1.0 - p_buy }
    }

    /// Renormalizes raw masses; `None` when both are zero.
    pub fn from_masses(buy: f64, sell: f64) -> Option<Self> {
        let total = buy + sell;
        (total > 0.0 && total.is_finite()).then(|| Self { p_buy: buy / total, p_sell: sell / total })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReply {
    pub raw_text: String,
    pub action_probs: Option<ActionProbs>,
    pub latency: Duration,
}

/// A request. `spec` is present for decision prompts so that the scripted
/// agent can read the context directly.
#[derive(Debug, Clone)]
pub struct Prompt {
    pub ticker: String,
    pub messages: Vec<ChatMessage>,
    pub spec: Option<PromptSpec>,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, prompt: &Prompt, trial_seed: u64) -> Result<ModelReply, GatewayError>;

    /// Folded into cache keys so a changed backend never serves stale replies.
    fn fingerprint(&self) -> String {
        String::new()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    reply: ModelReply,
}

type Slot = Arc<OnceCell<ModelReply>>;

/// Backend plus cache, semaphore and invocation counter.
pub struct Gateway {
    config: ModelConfig,
    backend: Arc<dyn Backend>,
    semaphore: Semaphore,
    cache: Mutex<HashMap<String, Slot>>,
    cache_file: Option<Mutex<std::fs::File>>,
    invocations: AtomicU64,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("model_id", &self.config.model_id).finish()
    }
}

impl Gateway {
    /// Builds the backend named by the config.
    pub fn from_config(config: ModelConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.backend {
            BackendKind::Scripted => {
                let agent = ScriptedAgent::load(config.agent.as_ref().expect("validated"))?;
                Arc::new(ScriptedBackend::new(agent))
            }
            BackendKind::Remote => {
                let key = std::env::var(API_KEY_ENV)
                    .map_err(|_| GatewayError::Config(format!("{API_KEY_ENV} is not set")))?;
                Arc::new(RemoteBackend::new(&config, key)?)
            }
        };
        Ok(Self::with_backend(config, backend))
    }

    pub fn with_backend(config: ModelConfig, backend: Arc<dyn Backend>) -> Self {
        let permits = config.max_concurrent.max(1);
        Self {
            config,
            backend,
            semaphore: Semaphore::new(permits),
            cache: Mutex::new(HashMap::new()),
            cache_file: None,
            invocations: AtomicU64::new(0),
        }
    }

    /// Loads previously cached replies and appends new ones to `path`.
    pub fn with_disk_cache(mut self, path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref();
        let cache_err = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(cache_err)?;
        }
        if path.exists() {
            let file = std::fs::File::open(path).map_err(cache_err)?;
            let mut cache = self.cache.lock().expect("cache lock");
            for line in std::io::BufReader::new(file).lines() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                // A torn final line from an interrupted run is skipped.
                let Ok(entry) = serde_json::from_str::<CacheLine>(&line) else {
                    tracing::warn!(path = %path.display(), "skipping unreadable cache line");
                    continue;
                };
                cache.insert(entry.key, Arc::new(OnceCell::new_with(Some(entry.reply))));
            }
        }
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(cache_err)?;
        self.cache_file = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn model_id(&self) -> &str {
        &self.config.model_id
    }

    /// Number of calls that reached the backend (cache misses).
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }

    pub fn cache_key(&self, messages: &[ChatMessage], trial_seed: u64) -> String {
        let messages = serde_json::to_vec(messages).expect("messages serialize");
        let messages_hash = seed::digest_hex(&messages);
        let fingerprint = self.backend.fingerprint();
        let seed = trial_seed.to_le_bytes();
        let temperature = self.config.temperature.to_bits().to_le_bytes();
        let parts: [&[u8]; 5] =
            [self.config.model_id.as_bytes(), fingerprint.as_bytes(), messages_hash.as_bytes(), &seed, &temperature];
        seed::digest_hex(&parts.join(&0x1F_u8))
    }

    pub async fn complete(&self, prompt: &Prompt, trial_seed: u64) -> Result<ModelReply, GatewayError> {
        let key = self.cache_key(&prompt.messages, trial_seed);
        let slot = {
            let mut cache = self.cache.lock().expect("cache lock");
            cache.entry(key.clone()).or_default().clone()
        };
        let reply = slot
            .get_or_try_init(|| async {
                let _permit = self.semaphore.acquire().await.expect("semaphore never closed");
                self.invocations.fetch_add(1, Ordering::SeqCst);
                let reply = self.backend.complete(prompt, trial_seed).await?;
                self.persist(&key, &reply)?;
                Ok::<_, GatewayError>(reply)
            })
            .await?;
        Ok(reply.clone())
    }

    fn persist(&self, key: &str, reply: &ModelReply) -> Result<(), GatewayError> {
        let Some(file) = &self.cache_file else {
            return Ok(());
        };
        let mut line = serde_json::to_string(&CacheLine { key: key.to_string(), reply: reply.clone() })
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        line.push('\n');
        let mut file = file.lock().expect("cache file lock");
        file.write_all(line.as_bytes()).map_err(|e| GatewayError::Cache(e.to_string()))
    }
}
