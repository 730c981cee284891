//! Chat-completion style HTTP backend.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, CompletionRequest, EmbeddingVector, GatewayError};

const SYSTEM_PROMPT: &str = "Follow the task framing exactly. The first line names the task; \
blocks start with a #NAME header and end with #END. Answer only in the format the INSTRUCTIONS block asks for.";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub base_url: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    pub completion_model: String,
    pub embedding_model: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            completion_model: "gpt-4-1106-preview".into(),
            embedding_model: "text-embedding-3-small".into(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::Client,
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .connect_timeout(Duration::from_secs(config.timeout_secs.clamp(1, 10)))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    async fn post_once(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, Attempt> {
        let mut req = self.client.post(self.url(path)).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("provider returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Err(Attempt::Fatal(GatewayError::Transport(format!(
                "provider returned {status}: {}",
                text.chars().take(200).collect::<String>()
            ))));
        }
        resp.json::<serde_json::Value>()
            .await
            .map_err(|e| Attempt::Fatal(GatewayError::Protocol(format!("invalid JSON body: {e}"))))
    }

    /// POST with exponential backoff on transport failures, 429 and 5xx.
    async fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, GatewayError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.post_once(path, &body).await {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    tracing::warn!(attempt, path, error = %msg, "remote call failed");
                    last = msg;
                }
            }
            if attempt < self.config.max_retries {
                tokio::time::sleep(delay).await;
                delay *= 2;
            }
        }
        Err(GatewayError::Transport(format!(
            "gave up after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }
}

/// Extracts the assistant message from a chat-completion response.
pub fn parse_chat_response(value: &serde_json::Value) -> Result<String, GatewayError> {
    value
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol("response lacks choices[0].message.content".into()))
}

/// Extracts embeddings from an embeddings response, ordered by `index`.
pub fn parse_embedding_response(value: &serde_json::Value, expected: usize) -> Result<Vec<EmbeddingVector>, GatewayError> {
    let data = value
        .get("data")
        .and_then(|d| d.as_array())
        .ok_or_else(|| GatewayError::Protocol("response lacks data array".into()))?;
    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let index = item.get("index").and_then(|i| i.as_u64()).map_or(pos, |i| i as usize);
        let values = item
            .get("embedding")
            .and_then(|e| e.as_array())
            .ok_or_else(|| GatewayError::Protocol("embedding item lacks vector".into()))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| GatewayError::Protocol("non-numeric embedding value".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        let slot = slots
            .get_mut(index)
            .ok_or_else(|| GatewayError::Protocol(format!("embedding index {index} out of range")))?;
        *slot = Some(EmbeddingVector::new(values));
    }
    let out: Vec<EmbeddingVector> = slots
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| GatewayError::Protocol("missing embeddings in response".into()))?;
    if let Some(first) = out.first() {
        if out.iter().any(|v| v.dimension() != first.dimension() || !v.is_finite()) {
            return Err(GatewayError::Protocol("inconsistent or non-finite embeddings".into()));
        }
    }
    Ok(out)
}

#[async_trait]
impl Backend for RemoteBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let body = json!({
            "model": self.config.completion_model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": request.rendered_text},
            ],
            "temperature": request.temperature,
            "seed": request.seed,
            "max_tokens": request.max_output_tokens,
        });
        let value = self.post("chat/completions", body).await?;
        parse_chat_response(&value)
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": self.config.embedding_model, "input": texts });
        let value = self.post("embeddings", body).await?;
        parse_embedding_response(&value, texts.len())
    }

    fn name(&self) -> &str {
        "remote"
    }
}
