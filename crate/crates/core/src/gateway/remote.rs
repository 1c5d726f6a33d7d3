//! OpenAI-compatible chat-completions client.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{ActionProbs, Backend, GatewayError, ModelConfig, ModelReply, Prompt};

pub const API_KEY_ENV: &str = "BIAS_PROBE_API_KEY";

const TOP_LOGPROBS: u32 = 10;

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    client: reqwest::Client,
    url: String,
    api_key: String,
    model_id: String,
    temperature: f64,
    request_logprobs: bool,
    retry_budget: u32,
    timeout: Duration,
    backoff_base: Duration,
}

impl RemoteBackend {
    pub fn new(config: &ModelConfig, api_key: String) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint_url
            .as_deref()
            .ok_or_else(|| GatewayError::Config("remote backend needs endpoint_url".into()))?;
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| GatewayError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            api_key,
            model_id: config.model_id.clone(),
            temperature: config.temperature,
            request_logprobs: config.request_logprobs,
            retry_budget: config.retry_budget,
            timeout: config.timeout(),
            backoff_base: Duration::from_millis(config.backoff_base_ms),
        })
    }

    fn body(&self, prompt: &Prompt) -> Value {
        let mut body = json!({
            "model": self.model_id,
            "messages": prompt.messages,
            "temperature": self.temperature,
            "logprobs": self.request_logprobs,
        });
        if self.request_logprobs {
            body["top_logprobs"] = json!(TOP_LOGPROBS);
        }
        body
    }

    fn backoff(&self, retry: u32) -> Duration {
        let jitter: f64 = rand::rng().random_range(0.5..1.5);
        self.backoff_base.mul_f64(2f64.powi(retry as i32) * jitter)
    }
}

enum Failure {
    Retryable(String),
    Fatal(GatewayError),
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    logprobs: Option<Value>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl RemoteBackend {
    async fn attempt(&self, body: &Value) -> Result<ModelReply, Failure> {
        let started = Instant::now();
        let response = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .await
            .map_err(|e| self.classify(e))?;
        let status = response.status();
        if status.is_server_error() || status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            let text = response.text().await.unwrap_or_default();
            return Err(Failure::Fatal(GatewayError::Config(format!("HTTP {status}: {}", truncate(&text)))));
        }
        let text = response.text().await.map_err(|e| self.classify(e))?;
        let completion: Completion = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(GatewayError::BadResponse(format!("{e}: {}", truncate(&text)))))?;
        let choice = completion
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Failure::Fatal(GatewayError::BadResponse("no choices".into())))?;
        Ok(ModelReply {
            raw_text: choice.message.content.unwrap_or_default(),
            action_probs: choice.logprobs.as_ref().and_then(extract_action_probs),
            latency: started.elapsed(),
        })
    }

    fn classify(&self, e: reqwest::Error) -> Failure {
        if e.is_timeout() {
            Failure::Fatal(GatewayError::Timeout(self.timeout))
        } else {
            Failure::Retryable(e.to_string())
        }
    }
}

fn truncate(s: &str) -> String {
    s.chars().take(200).collect()
}

#[async_trait]
impl Backend for RemoteBackend {
    async fn complete(&self, prompt: &Prompt, _trial_seed: u64) -> Result<ModelReply, GatewayError> {
        let body = self.body(prompt);
        let mut retry = 0;
        loop {
            match self.attempt(&body).await {
                Ok(reply) => return Ok(reply),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(message)) if retry < self.retry_budget => {
                    let wait = self.backoff(retry);
                    retry += 1;
                    tracing::warn!(model = %self.model_id, retry, ?wait, %message, "retrying request");
                    tokio::time::sleep(wait).await;
                }
                Err(Failure::Retryable(message)) => {
                    return Err(GatewayError::Transport { attempts: retry + 1, message });
                }
            }
        }
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}", self.url)
    }
}

fn normalize_token(token: &str) -> String {
    token.trim().trim_matches(|c: char| c == '"' || c == '\'').trim().to_lowercase()
}

/// Probability mass on "buy" vs "sell" at the decision-value token of an
/// OpenAI-style `logprobs` object.
pub fn extract_action_probs(logprobs: &Value) -> Option<ActionProbs> {
    let content = logprobs.get("content")?.as_array()?;
    let tokens: Vec<&str> = content.iter().map(|t| t.get("token").and_then(Value::as_str).unwrap_or("")).collect();
    let text: String = tokens.concat();
    let key = text.find("\"decision\"")?;
    let after_key = key + "\"decision\"".len();
    let rest = &text[after_key..];
    let colon = rest.find(':')?;
    let value_start =
        after_key + colon + 1 + rest[colon + 1..].find(|c: char| !c.is_whitespace() && c != '"').unwrap_or(0);

    let mut offset = 0;
    let position = tokens.iter().position(|t| {
        let end = offset + t.len();
        let hit = end > value_start && !normalize_token(t).is_empty();
        offset = end;
        hit
    })?;
    let entry = &content[position];

    let mut alternatives: Vec<(String, f64)> = entry
        .get("top_logprobs")
        .and_then(Value::as_array)
        .map(|alts| {
            alts.iter()
                .filter_map(|a| Some((a.get("token")?.as_str()?.to_string(), a.get("logprob")?.as_f64()?)))
                .collect()
        })
        .unwrap_or_default();
    if alternatives.is_empty() {
        alternatives.push((tokens[position].to_string(), entry.get("logprob")?.as_f64()?));
    }

    let (mut buy, mut sell) = (0.0, 0.0);
    for (token, logprob) in alternatives {
        let norm = normalize_token(&token);
        if norm.is_empty() {
            continue;
        }
        if "buy".starts_with(&norm) {
            buy += logprob.exp();
        } else if "sell".starts_with(&norm) {
            sell += logprob.exp();
        }
    }
    ActionProbs::from_masses(buy, sell)
}
