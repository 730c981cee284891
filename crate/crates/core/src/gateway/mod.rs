//! Access to text completion and embeddings.
//!
//! A [`Gateway`] wraps one [`Backend`] with a concurrency cap and call
//! counters. Two backends ship: [`remote::RemoteBackend`] speaks a
//! chat-completion HTTP protocol, [`sim::SimBackend`] answers from a hidden
//! keyword rule so that whole experiments run offline and replay exactly.

pub mod embedding;
pub mod remote;
pub mod sim;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::model::FilterPrompt;
use crate::render::{render_request, ReflectMode, RenderError, Task, TaskKind};

pub use embedding::{cosine_similarity, EmbeddingVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub rendered_text: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
}

#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;

    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;

    /// Short identifier for logs and reports.
    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GatewaySettings {
    pub max_concurrency: usize,
    pub classify_temperature: f64,
    pub generation_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            classify_temperature: 0.0,
            generation_temperature: 0.7,
            max_output_tokens: 512,
        }
    }
}

/// Snapshot of the gateway's call counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub classify: u64,
    pub reflect: u64,
    pub propose: u64,
    pub summarize: u64,
    pub draft: u64,
    pub embed_calls: u64,
    pub embedded_texts: u64,
}

impl CallCounts {
    pub fn completions(&self) -> u64 {
        self.classify + self.reflect + self.propose + self.summarize + self.draft
    }

    pub fn since(&self, earlier: &CallCounts) -> CallCounts {
        CallCounts {
            classify: self.classify - earlier.classify,
            reflect: self.reflect - earlier.reflect,
            propose: self.propose - earlier.propose,
            summarize: self.summarize - earlier.summarize,
            draft: self.draft - earlier.draft,
            embed_calls: self.embed_calls - earlier.embed_calls,
            embedded_texts: self.embedded_texts - earlier.embedded_texts,
        }
    }
}

#[derive(Default)]
struct Counters {
    by_kind: [AtomicU64; 5],
    embed_calls: AtomicU64,
    embedded_texts: AtomicU64,
}

fn kind_slot(kind: TaskKind) -> usize {
    match kind {
        TaskKind::Classify => 0,
        TaskKind::Reflect => 1,
        TaskKind::Propose => 2,
        TaskKind::Summarize => 3,
        TaskKind::Draft => 4,
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    limit: Semaphore,
    settings: GatewaySettings,
    counters: Counters,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, settings: GatewaySettings) -> Self {
        Self {
            backend,
            limit: Semaphore::new(settings.max_concurrency.max(1)),
            settings,
            counters: Counters::default(),
        }
    }

    pub fn simulated(rule: sim::SimulationRule) -> Self {
        Self::new(Arc::new(sim::SimBackend::new(rule)), GatewaySettings::default())
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn counts(&self) -> CallCounts {
        let k = &self.counters.by_kind;
        CallCounts {
            classify: k[0].load(Ordering::Relaxed),
            reflect: k[1].load(Ordering::Relaxed),
            propose: k[2].load(Ordering::Relaxed),
            summarize: k[3].load(Ordering::Relaxed),
            draft: k[4].load(Ordering::Relaxed),
            embed_calls: self.counters.embed_calls.load(Ordering::Relaxed),
            embedded_texts: self.counters.embedded_texts.load(Ordering::Relaxed),
        }
    }

    fn temperature_for(&self, task: &Task) -> f64 {
        match task {
            Task::Classify(_)
            | Task::Reflect {
                mode: ReflectMode::Explain,
                ..
            } => self.settings.classify_temperature,
            _ => self.settings.generation_temperature,
        }
    }

    /// Renders `task` against `prompt` and sends it as one completion call.
    pub async fn run(&self, prompt: Option<&FilterPrompt>, task: &Task, seed: u64) -> Result<String, GatewayError> {
        let rendered_text = render_request(prompt, task)?;
        let request = CompletionRequest {
            rendered_text,
            temperature: self.temperature_for(task),
            seed,
            max_output_tokens: self.settings.max_output_tokens,
        };
        self.complete(task.kind(), &request).await
    }

    pub async fn complete(&self, kind: TaskKind, request: &CompletionRequest) -> Result<String, GatewayError> {
        let _permit = self
            .limit
            .acquire()
            .await
            .map_err(|_| GatewayError::Transport("gateway closed".into()))?;
        self.counters.by_kind[kind_slot(kind)].fetch_add(1, Ordering::Relaxed);
        self.backend.complete(request).await
    }

    pub async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::Protocol("embed called with no texts".into()));
        }
        let _permit = self
            .limit
            .acquire()
            .await
            .map_err(|_| GatewayError::Transport("gateway closed".into()))?;
        self.counters.embed_calls.fetch_add(1, Ordering::Relaxed);
        self.counters
            .embedded_texts
            .fetch_add(texts.len() as u64, Ordering::Relaxed);
        let out = self.backend.embed(texts).await?;
        if out.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                out.len()
            )));
        }
        Ok(out)
    }
}
