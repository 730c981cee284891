//! Comment sources: one-shot JSONL files and polled platform adapters.
//!
//! Polled sources keep a high-water mark, the newest (published_at, id)
//! ingested so far. The first sync of a source keeps only its most recent
//! [`FIRST_SYNC_CAP`] comments.

use std::path::{Path, PathBuf};
use std::time::Duration;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use sieve_core::jsonl::read_comments;
use sieve_core::Comment;

pub const FIRST_SYNC_CAP: usize = 1000;
pub const DEFAULT_POLL_SECS: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    /// Ingested once at startup.
    Jsonl { path: PathBuf },
    /// A replayable stand-in for a platform API: a JSONL file re-read on
    /// every poll.
    Fixture {
        id: String,
        path: PathBuf,
        #[serde(default = "default_interval")]
        interval_secs: u64,
    },
}

fn default_interval() -> u64 {
    DEFAULT_POLL_SECS
}

impl SourceConfig {
    pub fn path(&self) -> &Path {
        match self {
            SourceConfig::Jsonl { path } | SourceConfig::Fixture { path, .. } => path,
        }
    }

    pub fn path_mut(&mut self) -> &mut PathBuf {
        match self {
            SourceConfig::Jsonl { path } | SourceConfig::Fixture { path, .. } => path,
        }
    }

    pub fn interval(&self) -> Option<Duration> {
        match self {
            SourceConfig::Jsonl { .. } => None,
            SourceConfig::Fixture { interval_secs, .. } => Some(Duration::from_secs((*interval_secs).max(1))),
        }
    }
}

/// Position of the newest comment taken from a source.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HighWater {
    pub published_at: DateTime<Utc>,
    pub id: String,
}

impl HighWater {
    pub fn of(c: &Comment) -> Self {
        Self {
            published_at: c.published_at,
            id: c.id.clone(),
        }
    }

    pub fn encode(&self) -> String {
        format!("{}|{}", self.published_at.to_rfc3339(), self.id)
    }

    pub fn decode(s: &str) -> Option<Self> {
        let (t, id) = s.split_once('|')?;
        Some(Self {
            published_at: DateTime::parse_from_rfc3339(t).ok()?.with_timezone(&Utc),
            id: id.to_string(),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Fetched {
    pub comments: Vec<Comment>,
    /// (line, reason) of records the adapter could not read.
    pub skipped: Vec<(usize, String)>,
}

/// A platform the service polls for new comments.
#[async_trait]
pub trait PollingAdapter: Send + Sync {
    fn source_id(&self) -> &str;

    /// Comments newer than `since` (all of them when None). Adapters may
    /// return more; the caller filters again.
    async fn fetch(&self, since: Option<&HighWater>) -> Result<Fetched, String>;
}

pub struct FixtureAdapter {
    id: String,
    path: PathBuf,
}

impl FixtureAdapter {
    pub fn new(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
        }
    }
}

#[async_trait]
impl PollingAdapter for FixtureAdapter {
    fn source_id(&self) -> &str {
        &self.id
    }

    async fn fetch(&self, since: Option<&HighWater>) -> Result<Fetched, String> {
        let path = self.path.clone();
        let parsed = tokio::task::spawn_blocking(move || {
            let file = std::fs::File::open(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            read_comments(std::io::BufReader::new(file)).map_err(|e| e.to_string())
        })
        .await
        .map_err(|e| e.to_string())??;
        let comments = parsed
            .comments
            .into_iter()
            .filter(|c| since.is_none_or(|m| HighWater::of(c) > *m))
            .collect();
        Ok(Fetched {
            comments,
            skipped: parsed.skipped,
        })
    }
}

/// What one poll should ingest and the mark to store afterwards.
pub fn plan_poll(mut comments: Vec<Comment>, mark: Option<&HighWater>) -> (Vec<Comment>, Option<HighWater>) {
    comments.retain(|c| mark.is_none_or(|m| HighWater::of(c) > *m));
    if mark.is_none() {
        comments.sort_by(|a, b| b.published_at.cmp(&a.published_at).then_with(|| a.id.cmp(&b.id)));
        comments.truncate(FIRST_SYNC_CAP);
    }
    let newest = comments.iter().map(HighWater::of).max();
    let next = match (newest, mark) {
        (Some(n), Some(m)) => Some(n.max(m.clone())),
        (n, m) => n.or_else(|| m.cloned()),
    };
    (comments, next)
}
