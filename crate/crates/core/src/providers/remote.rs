//! Chat-completions and embeddings over HTTP(S) with bounded retries.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::embed::text_hash;
use super::{ChatProvider, ChatRequest, Embedder, EmbeddingVector, ProviderError, Semaphore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `retry` (0-based), capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(30));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Delay before the next retry. An advertised delay (Retry-After) replaces
    /// the computed backoff; delays never shrink across retries.
    pub fn next_delay(&self, retry: u32, advertised: Option<Duration>, previous: Duration) -> Duration {
        let wanted = advertised.map_or_else(|| self.backoff(retry), |d| d.min(self.max_delay));
        wanted.max(previous)
    }
}

#[derive(Debug)]
pub(crate) enum AttemptError {
    Transient { message: String, retry_after: Option<Duration> },
    Fatal(String),
}

/// Run `op` until it succeeds, fails fatally, or the retry budget is spent.
pub(crate) fn run_with_retry<T>(
    policy: &RetryPolicy,
    mut op: impl FnMut() -> Result<T, AttemptError>,
    mut sleep: impl FnMut(Duration),
) -> Result<T, ProviderError> {
    let mut attempts = 0u32;
    let mut previous = Duration::ZERO;
    loop {
        attempts += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(AttemptError::Fatal(message)) => return Err(ProviderError::Failure { attempts, message }),
            Err(AttemptError::Transient { message, retry_after }) => {
                let retry = attempts - 1;
                if retry >= policy.max_retries {
                    return Err(ProviderError::Failure { attempts, message });
                }
                let delay = policy.next_delay(retry, retry_after, previous);
                previous = delay;
                sleep(delay);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub api_key: String,
    pub model: String,
    pub embed_base_url: Option<String>,
    pub embed_model: String,
    pub retry: RetryPolicy,
    pub max_concurrency: usize,
    pub timeout: Duration,
}

impl RemoteConfig {
    /// Reads LLM_BASE_URL, LLM_API_KEY and optional EMBED_BASE_URL.
    pub fn from_env(model: &str) -> Result<Self, ProviderError> {
        let base_url =
            std::env::var("LLM_BASE_URL").map_err(|_| ProviderError::Config("LLM_BASE_URL is not set".into()))?;
        let api_key =
            std::env::var("LLM_API_KEY").map_err(|_| ProviderError::Config("LLM_API_KEY is not set".into()))?;
        Ok(Self {
            base_url,
            api_key,
            model: model.to_string(),
            embed_base_url: std::env::var("EMBED_BASE_URL").ok(),
            embed_model: "text-embedding-3-small".into(),
            retry: RetryPolicy::default(),
            max_concurrency: 4,
            timeout: Duration::from_secs(120),
        })
    }
}

fn http_client(timeout: Duration) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Config(format!("http client: {e}")))
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: &str,
    body: &serde_json::Value,
) -> Result<String, AttemptError> {
    let resp = client.post(url).bearer_auth(api_key).json(body).send().map_err(|e| {
        if e.is_timeout() || e.is_connect() || e.is_request() {
            AttemptError::Transient { message: e.to_string(), retry_after: None }
        } else {
            AttemptError::Fatal(e.to_string())
        }
    })?;
    let status = resp.status();
    if status.is_success() {
        return resp.text().map_err(|e| AttemptError::Transient { message: e.to_string(), retry_after: None });
    }
    let advertised = retry_after(&resp);
    let message = format!("{url} returned {status}");
    match status.as_u16() {
        408 | 429 | 500 | 502 | 503 | 504 => Err(AttemptError::Transient { message, retry_after: advertised }),
        _ => Err(AttemptError::Fatal(message)),
    }
}

pub struct RemoteChat {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    gate: Semaphore,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl RemoteChat {
    pub fn new(config: RemoteConfig) -> Result<Self, ProviderError> {
        let client = http_client(config.timeout)?;
        let gate = Semaphore::new(config.max_concurrency);
        Ok(Self { config, client, gate })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![json!({"role": "system", "content": request.system_text})];
        messages.extend(request.messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.text})));
        let model = if request.model.is_empty() { &self.config.model } else { &request.model };
        json!({
            "model": model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        })
    }
}

impl ChatProvider for RemoteChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = self.body(request);
        let _permit = self.gate.acquire();
        let text = run_with_retry(
            &self.config.retry,
            || post_json(&self.client, &url, &self.config.api_key, &body),
            std::thread::sleep,
        )?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Failure { attempts: 1, message: format!("bad completion body: {e}") })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Failure { attempts: 1, message: "completion has no content".into() })
    }

    fn identity(&self) -> String {
        format!("remote:{}@{}", self.config.model, self.config.base_url)
    }
}

pub struct RemoteEmbedder {
    config: RemoteConfig,
    url: String,
    client: reqwest::blocking::Client,
    gate: Semaphore,
    dimension: usize,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteConfig, dimension: usize) -> Result<Self, ProviderError> {
        let base =
            config.embed_base_url.clone().ok_or_else(|| ProviderError::Config("EMBED_BASE_URL is not set".into()))?;
        let url = format!("{}/embeddings", base.trim_end_matches('/'));
        let client = http_client(config.timeout)?;
        let gate = Semaphore::new(config.max_concurrency);
        Ok(Self { config, url, client, gate, dimension })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let body = json!({"model": self.config.embed_model, "input": text});
        let _permit = self.gate.acquire();
        let raw = run_with_retry(
            &self.config.retry,
            || post_json(&self.client, &self.url, &self.config.api_key, &body),
            std::thread::sleep,
        )?;
        let parsed: EmbeddingResponse = serde_json::from_str(&raw)
            .map_err(|e| ProviderError::Failure { attempts: 1, message: format!("bad embedding body: {e}") })?;
        let values = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| ProviderError::Failure { attempts: 1, message: "no embedding returned".into() })?;
        if values.len() != self.dimension {
            return Err(ProviderError::Failure {
                attempts: 1,
                message: format!("expected dimension {}, got {}", self.dimension, values.len()),
            });
        }
        Ok(EmbeddingVector { values, text_hash: text_hash(text) })
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
