//! Durable state in one SQLite file: filter lineages, comments, labels, the
//! prediction cache, audits, moderation actions, jobs and ingest marks.
//!
//! Every write runs in its own transaction. Versions, audits and archived
//! labels are append-only.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{DateTime, NaiveDate, SecondsFormat, Utc};
use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension, Transaction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, PredictionCache};
use crate::classifier::Prediction;
use crate::hash::hash_prompt;
use crate::model::{
    validate_prompt, Comment, CommentId, FilterId, FilterPrompt, Label, LabelSource, LabeledComment, ModerationAction, Verdict,
};

pub const EXPORT_SCHEMA: &str = "sieve-filter/v1";

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS filters (
    filter_id   TEXT PRIMARY KEY,
    name        TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    auto_action TEXT
);
CREATE TABLE IF NOT EXISTS versions (
    filter_id       TEXT NOT NULL REFERENCES filters(filter_id),
    version         INTEGER NOT NULL,
    parent_version  INTEGER,
    content_hash    TEXT NOT NULL,
    body            TEXT NOT NULL,
    created_at      TEXT NOT NULL,
    PRIMARY KEY (filter_id, version)
);
CREATE TABLE IF NOT EXISTS comments (
    comment_id    TEXT PRIMARY KEY,
    published_at  TEXT NOT NULL,
    body          TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS labels (
    filter_id   TEXT NOT NULL REFERENCES filters(filter_id),
    comment_id  TEXT NOT NULL REFERENCES comments(comment_id),
    verdict     TEXT NOT NULL,
    source      TEXT NOT NULL,
    labeled_at  TEXT NOT NULL,
    PRIMARY KEY (filter_id, comment_id)
);
CREATE TABLE IF NOT EXISTS label_archive (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    filter_id   TEXT NOT NULL,
    comment_id  TEXT NOT NULL,
    verdict     TEXT NOT NULL,
    source      TEXT NOT NULL,
    labeled_at  TEXT NOT NULL,
    replaced_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS predictions (
    prompt_hash  TEXT NOT NULL,
    comment_id   TEXT NOT NULL,
    body         TEXT NOT NULL,
    PRIMARY KEY (prompt_hash, comment_id)
);
CREATE TABLE IF NOT EXISTS explanations (
    prompt_hash  TEXT NOT NULL,
    comment_id   TEXT NOT NULL,
    text         TEXT NOT NULL,
    PRIMARY KEY (prompt_hash, comment_id)
);
CREATE TABLE IF NOT EXISTS audits (
    seq           INTEGER PRIMARY KEY AUTOINCREMENT,
    filter_id     TEXT NOT NULL REFERENCES filters(filter_id),
    comment_id    TEXT NOT NULL,
    user_verdict  TEXT NOT NULL,
    predicted     TEXT NOT NULL,
    prompt_hash   TEXT NOT NULL,
    at            TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS actions (
    seq          INTEGER PRIMARY KEY AUTOINCREMENT,
    filter_id    TEXT NOT NULL,
    comment_id   TEXT NOT NULL,
    action       TEXT NOT NULL,
    executed_at  TEXT NOT NULL,
    status       TEXT NOT NULL,
    detail       TEXT
);
CREATE TABLE IF NOT EXISTS jobs (
    job_id      TEXT PRIMARY KEY,
    filter_id   TEXT,
    state       TEXT NOT NULL,
    body        TEXT NOT NULL,
    updated_at  TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS ingest_marks (
    source_id   TEXT PRIMARY KEY,
    mark        TEXT NOT NULL,
    updated_at  TEXT NOT NULL
);
"#;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid: {0}")]
    Invalid(String),
    #[error("storage: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("encoding: {0}")]
    Encoding(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn ts(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn parse_ts(s: &str) -> Result<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| StoreError::Invalid(format!("timestamp {s:?}: {e}")))
}

fn parse_verdict(s: &str) -> Result<Verdict> {
    s.parse().map_err(StoreError::Invalid)
}

fn parse_source(s: &str) -> Result<LabelSource> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(StoreError::from)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub filter_id: FilterId,
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub latest_version: u32,
    /// Applied by the scheduler to newly caught comments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_action: Option<ModerationAction>,
}

/// A filter with its whole version chain, oldest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub filter_id: FilterId,
    pub name: String,
    pub created_at: DateTime<Utc>,
    pub versions: Vec<FilterPrompt>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub filter_id: FilterId,
    pub comment_id: CommentId,
    pub user_verdict: Verdict,
    pub predicted: Verdict,
    /// Hash of the prompt whose prediction was audited.
    pub prompt_hash: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Executed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub record_id: i64,
    pub filter_id: FilterId,
    pub comment_id: CommentId,
    pub action: ModerationAction,
    pub executed_at: DateTime<Utc>,
    pub status: ActionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DailyCount {
    pub day: NaiveDate,
    pub caught: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AuditStats {
    pub false_positives: u64,
    pub false_negatives: u64,
    pub correct: u64,
    pub caught_total: u64,
    pub uncaught_total: u64,
    pub daily_caught_series: Vec<DailyCount>,
}

/// Inclusive-exclusive range over comment publication time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Window {
    pub from: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl Window {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from.is_none_or(|f| t >= f) && self.until.is_none_or(|u| t < u)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRow {
    pub job_id: String,
    pub filter_id: Option<FilterId>,
    pub state: String,
    /// The job as JSON; its shape belongs to the service.
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportedLabel {
    pub comment: Comment,
    pub label: Label,
}

/// A shareable filter: its lineage and the labels behind it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterExport {
    pub schema: String,
    pub filter_id: FilterId,
    pub name: String,
    pub versions: Vec<FilterPrompt>,
    pub labels: Vec<ExportedLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompactionReport {
    pub predictions_removed: u64,
    pub explanations_removed: u64,
}

pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn: Mutex::new(conn) })
    }

    fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> Result<T>) -> Result<T> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let conn = self.conn.lock();
        f(&conn)
    }

    // Filters and versions.

    pub fn create_filter(&self, filter_id: &str, name: &str) -> Result<()> {
        if filter_id.trim().is_empty() {
            return Err(StoreError::Invalid("filter id empty".into()));
        }
        self.write(|tx| {
            let n = tx.execute(
                "INSERT OR IGNORE INTO filters (filter_id, name, created_at) VALUES (?1, ?2, ?3)",
                params![filter_id, name, ts(Utc::now())],
            )?;
            if n == 0 {
                return Err(StoreError::Conflict(format!("filter {filter_id} exists")));
            }
            Ok(())
        })
    }

    pub fn filter_exists(&self, filter_id: &str) -> Result<bool> {
        self.read(|c| {
            Ok(c.query_row("SELECT 1 FROM filters WHERE filter_id = ?1", [filter_id], |_| Ok(()))
                .optional()?
                .is_some())
        })
    }

    fn require_filter(c: &Connection, filter_id: &str) -> Result<(String, DateTime<Utc>)> {
        let row: Option<(String, String)> = c
            .query_row("SELECT name, created_at FROM filters WHERE filter_id = ?1", [filter_id], |r| {
                Ok((r.get(0)?, r.get(1)?))
            })
            .optional()?;
        let (name, created) = row.ok_or_else(|| StoreError::NotFound(format!("filter {filter_id}")))?;
        Ok((name, parse_ts(&created)?))
    }

    pub fn list_filters(&self) -> Result<Vec<FilterSummary>> {
        self.read(|c| {
            let mut stmt = c.prepare(
                "SELECT f.filter_id, f.name, f.created_at, COALESCE(MAX(v.version), 0), f.auto_action
                 FROM filters f LEFT JOIN versions v ON v.filter_id = f.filter_id
                 GROUP BY f.filter_id ORDER BY f.filter_id",
            )?;
            let rows = stmt.query_map([], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, u32>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })?;
            rows.map(|row| {
                let (filter_id, name, created, latest_version, action) = row?;
                Ok(FilterSummary {
                    filter_id,
                    name,
                    created_at: parse_ts(&created)?,
                    latest_version,
                    auto_action: action.map(|a| serde_json::from_str(&a)).transpose()?,
                })
            })
            .collect()
        })
    }

    pub fn filter_summary(&self, filter_id: &str) -> Result<FilterSummary> {
        self.list_filters()?
            .into_iter()
            .find(|f| f.filter_id == filter_id)
            .ok_or_else(|| StoreError::NotFound(format!("filter {filter_id}")))
    }

    pub fn set_auto_action(&self, filter_id: &str, action: Option<&ModerationAction>) -> Result<()> {
        let encoded = action.map(serde_json::to_string).transpose()?;
        self.write(|tx| {
            let n = tx.execute(
                "UPDATE filters SET auto_action = ?2 WHERE filter_id = ?1",
                params![filter_id, encoded],
            )?;
            if n == 0 {
                return Err(StoreError::NotFound(format!("filter {filter_id}")));
            }
            Ok(())
        })
    }

    /// Appends a version. The first version must be 1 with no parent; later
    /// ones must name the current latest version as parent. The stored
    /// version number is `parent + 1` and the hash is recomputed.
    pub fn put_filter_version(&self, filter_id: &str, prompt: &FilterPrompt) -> Result<u32> {
        let violations = validate_prompt(prompt);
        if !violations.is_empty() {
            return Err(StoreError::Invalid(violations.join("; ")));
        }
        self.write(|tx| {
            Self::require_filter(tx, filter_id)?;
            let latest: Option<u32> = tx.query_row(
                "SELECT MAX(version) FROM versions WHERE filter_id = ?1",
                [filter_id],
                |r| r.get(0),
            )?;
            let version = match (latest, prompt.parent_version) {
                (None, None) => 1,
                (None, Some(p)) => return Err(StoreError::Conflict(format!("parent version {p} does not exist"))),
                (Some(_), None) => return Err(StoreError::Conflict("filter already has a root version".into())),
                (Some(l), Some(p)) if p == l => l + 1,
                (Some(l), Some(p)) if p < l => {
                    return Err(StoreError::Conflict(format!("parent version {p} is stale; latest is {l}")))
                }
                (Some(_), Some(p)) => return Err(StoreError::Conflict(format!("parent version {p} does not exist"))),
            };
            let mut stored = prompt.clone();
            stored.filter_id = filter_id.to_string();
            stored.version = version;
            stored.content_hash = hash_prompt(&stored);
            tx.execute(
                "INSERT INTO versions (filter_id, version, parent_version, content_hash, body, created_at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![
                    filter_id,
                    version,
                    stored.parent_version,
                    stored.content_hash,
                    serde_json::to_string(&stored)?,
                    ts(Utc::now())
                ],
            )?;
            Ok(version)
        })
    }

    pub fn version(&self, filter_id: &str, version: u32) -> Result<FilterPrompt> {
        self.read(|c| {
            let body: Option<String> = c
                .query_row(
                    "SELECT body FROM versions WHERE filter_id = ?1 AND version = ?2",
                    params![filter_id, version],
                    |r| r.get(0),
                )
                .optional()?;
            let body = body.ok_or_else(|| StoreError::NotFound(format!("filter {filter_id} version {version}")))?;
            Ok(serde_json::from_str(&body)?)
        })
    }

    pub fn latest_version(&self, filter_id: &str) -> Result<FilterPrompt> {
        self.read(|c| {
            Self::require_filter(c, filter_id)?;
            let body: Option<String> = c
                .query_row(
                    "SELECT body FROM versions WHERE filter_id = ?1 ORDER BY version DESC LIMIT 1",
                    [filter_id],
                    |r| r.get(0),
                )
                .optional()?;
            let body = body.ok_or_else(|| StoreError::NotFound(format!("filter {filter_id} has no versions")))?;
            Ok(serde_json::from_str(&body)?)
        })
    }

    pub fn filter(&self, filter_id: &str) -> Result<FilterRecord> {
        self.read(|c| {
            let (name, created_at) = Self::require_filter(c, filter_id)?;
            let mut stmt = c.prepare("SELECT body FROM versions WHERE filter_id = ?1 ORDER BY version")?;
            let versions = stmt
                .query_map([filter_id], |r| r.get::<_, String>(0))?
                .map(|b| Ok(serde_json::from_str(&b?)?))
                .collect::<Result<Vec<FilterPrompt>>>()?;
            Ok(FilterRecord {
                filter_id: filter_id.to_string(),
                name,
                created_at,
                versions,
            })
        })
    }

    // Comments.

    /// Inserts comments not seen before; returns how many were new.
    pub fn put_comments(&self, comments: &[Comment]) -> Result<usize> {
        for c in comments {
            c.check().map_err(StoreError::Invalid)?;
        }
        self.write(|tx| {
            let mut stmt =
                tx.prepare("INSERT OR IGNORE INTO comments (comment_id, published_at, body) VALUES (?1, ?2, ?3)")?;
            let mut added = 0;
            for c in comments {
                added += stmt.execute(params![c.id, ts(c.published_at), serde_json::to_string(c)?])?;
            }
            Ok(added)
        })
    }

    pub fn comment(&self, comment_id: &str) -> Result<Option<Comment>> {
        self.read(|c| {
            let body: Option<String> = c
                .query_row("SELECT body FROM comments WHERE comment_id = ?1", [comment_id], |r| r.get(0))
                .optional()?;
            body.map(|b| Ok(serde_json::from_str(&b)?)).transpose()
        })
    }

    /// All comments, newest first, ties by id.
    pub fn comments(&self) -> Result<Vec<Comment>> {
        self.read(|c| {
            let mut stmt = c.prepare("SELECT body FROM comments ORDER BY published_at DESC, comment_id ASC")?;
            let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
            rows.map(|b| Ok(serde_json::from_str(&b?)?)).collect()
        })
    }

    pub fn comment_count(&self) -> Result<u64> {
        self.read(|c| Ok(c.query_row("SELECT COUNT(*) FROM comments", [], |r| r.get(0))?))
    }

    // Labels.

    /// Sets the current label, archiving any label it replaces.
    pub fn put_label(&self, filter_id: &str, label: &Label) -> Result<()> {
        self.write(|tx| Self::put_label_tx(tx, filter_id, label))
    }

    pub fn put_labels(&self, filter_id: &str, labels: &[Label]) -> Result<()> {
        self.write(|tx| {
            for l in labels {
                Self::put_label_tx(tx, filter_id, l)?;
            }
            Ok(())
        })
    }

    fn put_label_tx(tx: &Transaction<'_>, filter_id: &str, label: &Label) -> Result<()> {
        Self::require_filter(tx, filter_id)?;
        let known: Option<i64> = tx
            .query_row("SELECT 1 FROM comments WHERE comment_id = ?1", [&label.comment_id], |r| r.get(0))
            .optional()?;
        if known.is_none() {
            return Err(StoreError::NotFound(format!("comment {}", label.comment_id)));
        }
        let now = ts(Utc::now());
        tx.execute(
            "INSERT INTO label_archive (filter_id, comment_id, verdict, source, labeled_at, replaced_at)
             SELECT filter_id, comment_id, verdict, source, labeled_at, ?3 FROM labels
             WHERE filter_id = ?1 AND comment_id = ?2",
            params![filter_id, label.comment_id, now],
        )?;
        tx.execute(
            "INSERT OR REPLACE INTO labels (filter_id, comment_id, verdict, source, labeled_at) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![
                filter_id,
                label.comment_id,
                label.verdict.as_str(),
                label.source.as_str(),
                ts(label.labeled_at)
            ],
        )?;
        Ok(())
    }

    fn label_rows(c: &Connection, sql: &str, args: &[&str]) -> Result<Vec<Label>> {
        let mut stmt = c.prepare(sql)?;
        let rows = stmt.query_map(rusqlite::params_from_iter(args), |r| {
            Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?, r.get::<_, String>(2)?, r.get::<_, String>(3)?))
        })?;
        rows.map(|row| {
            let (comment_id, verdict, source, at) = row?;
            Ok(Label {
                comment_id,
                verdict: parse_verdict(&verdict)?,
                source: parse_source(&source)?,
                labeled_at: parse_ts(&at)?,
            })
        })
        .collect()
    }

    /// Current labels, in labeling order.
    pub fn labels(&self, filter_id: &str) -> Result<Vec<Label>> {
        self.read(|c| {
            Self::require_filter(c, filter_id)?;
            Self::label_rows(
                c,
                "SELECT comment_id, verdict, source, labeled_at FROM labels WHERE filter_id = ?1 ORDER BY labeled_at, comment_id",
                &[filter_id],
            )
        })
    }

    /// Labels a comment held before its current one, oldest first.
    pub fn archived_labels(&self, filter_id: &str, comment_id: &str) -> Result<Vec<Label>> {
        self.read(|c| {
            Self::label_rows(
                c,
                "SELECT comment_id, verdict, source, labeled_at FROM label_archive
                 WHERE filter_id = ?1 AND comment_id = ?2 ORDER BY seq",
                &[filter_id, comment_id],
            )
        })
    }

    /// Current labels joined with their comments.
    pub fn labeled_comments(&self, filter_id: &str) -> Result<Vec<LabeledComment>> {
        let labels = self.labels(filter_id)?;
        labels
            .into_iter()
            .map(|l| {
                let comment = self
                    .comment(&l.comment_id)?
                    .ok_or_else(|| StoreError::NotFound(format!("comment {}", l.comment_id)))?;
                Ok(LabeledComment {
                    comment,
                    verdict: l.verdict,
                })
            })
            .collect()
    }

    // Prediction cache.

    pub fn predictions_for(&self, prompt_hash: &str) -> Result<HashMap<CommentId, Prediction>> {
        self.read(|c| {
            let mut stmt = c.prepare("SELECT comment_id, body FROM predictions WHERE prompt_hash = ?1")?;
            let rows = stmt.query_map([prompt_hash], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
            rows.map(|row| {
                let (id, body) = row?;
                Ok((id, serde_json::from_str(&body)?))
            })
            .collect()
        })
    }

    /// Every cached prediction, ordered by key.
    pub fn scan_predictions(&self) -> Result<Vec<Prediction>> {
        self.read(|c| {
            let mut stmt = c.prepare("SELECT body FROM predictions ORDER BY prompt_hash, comment_id")?;
            let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
            rows.map(|b| Ok(serde_json::from_str(&b?)?)).collect()
        })
    }

    // Audits.

    pub fn record_audit(&self, event: &AuditEvent) -> Result<()> {
        self.write(|tx| {
            Self::require_filter(tx, &event.filter_id)?;
            tx.execute(
                "INSERT INTO audits (filter_id, comment_id, user_verdict, predicted, prompt_hash, at)
                 VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![
                    event.filter_id,
                    event.comment_id,
                    event.user_verdict.as_str(),
                    event.predicted.as_str(),
                    event.prompt_hash,
                    ts(event.at)
                ],
            )?;
            Ok(())
        })
    }

    /// All audit events for a filter, in recording order.
    pub fn audits(&self, filter_id: &str) -> Result<Vec<AuditEvent>> {
        self.read(|c| {
            let mut stmt = c.prepare(
                "SELECT comment_id, user_verdict, predicted, prompt_hash, at FROM audits WHERE filter_id = ?1 ORDER BY seq",
            )?;
            let rows = stmt.query_map([filter_id], |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, String>(4)?,
                ))
            })?;
            rows.map(|row| {
                let (comment_id, user, predicted, prompt_hash, at) = row?;
                Ok(AuditEvent {
                    filter_id: filter_id.to_string(),
                    comment_id,
                    user_verdict: parse_verdict(&user)?,
                    predicted: parse_verdict(&predicted)?,
                    prompt_hash,
                    at: parse_ts(&at)?,
                })
            })
            .collect()
        })
    }

    /// Audit agreement and catch counts for the filter's latest version over
    /// comments published inside `window`. The latest audit of a comment wins.
    pub fn audit_stats(&self, filter_id: &str, window: Window) -> Result<AuditStats> {
        let prompt = self.latest_version(filter_id)?;
        let predictions = self.predictions_for(&prompt.content_hash)?;
        let comments = self.comments()?;
        let published: HashMap<&str, DateTime<Utc>> = comments.iter().map(|c| (c.id.as_str(), c.published_at)).collect();
        let mut stats = AuditStats::default();

        let mut latest: BTreeMap<String, AuditEvent> = BTreeMap::new();
        for e in self.audits(filter_id)? {
            latest.insert(e.comment_id.clone(), e);
        }
        for e in latest.values() {
            if !published.get(e.comment_id.as_str()).is_some_and(|t| window.contains(*t)) {
                continue;
            }
            match (e.predicted, e.user_verdict) {
                (p, u) if p == u => stats.correct += 1,
                (Verdict::Catch, _) => stats.false_positives += 1,
                (Verdict::NotCatch, _) => stats.false_negatives += 1,
            }
        }

        let mut daily: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        for c in &comments {
            if !window.contains(c.published_at) {
                continue;
            }
            match predictions.get(&c.id).map(|p| p.verdict) {
                Some(Verdict::Catch) => {
                    stats.caught_total += 1;
                    *daily.entry(c.published_at.date_naive()).or_default() += 1;
                }
                Some(Verdict::NotCatch) => stats.uncaught_total += 1,
                None => {}
            }
        }
        stats.daily_caught_series = daily.into_iter().map(|(day, caught)| DailyCount { day, caught }).collect();
        Ok(stats)
    }

    // Actions.

    pub fn record_action(
        &self,
        filter_id: &str,
        comment_id: &str,
        action: &ModerationAction,
        status: ActionStatus,
        detail: Option<&str>,
    ) -> Result<ActionRecord> {
        let executed_at = Utc::now();
        let status_str = match status {
            ActionStatus::Executed => "executed",
            ActionStatus::Failed => "failed",
        };
        let record_id = self.write(|tx| {
            Self::require_filter(tx, filter_id)?;
            tx.execute(
                "INSERT INTO actions (filter_id, comment_id, action, executed_at, status, detail) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                params![filter_id, comment_id, serde_json::to_string(action)?, ts(executed_at), status_str, detail],
            )?;
            Ok(tx.last_insert_rowid())
        })?;
        Ok(ActionRecord {
            record_id,
            filter_id: filter_id.to_string(),
            comment_id: comment_id.to_string(),
            action: action.clone(),
            executed_at: parse_ts(&ts(executed_at))?,
            status,
            detail: detail.map(str::to_string),
        })
    }

    pub fn actions(&self, filter_id: &str) -> Result<Vec<ActionRecord>> {
        self.read(|c| {
            let mut stmt = c.prepare(
                "SELECT seq, comment_id, action, executed_at, status, detail FROM actions WHERE filter_id = ?1 ORDER BY seq",
            )?;
            let rows = stmt.query_map([filter_id], |r| {
                Ok((
                    r.get::<_, i64>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, String>(4)?,
                    r.get::<_, Option<String>>(5)?,
                ))
            })?;
            rows.map(|row| {
                let (record_id, comment_id, action, at, status, detail) = row?;
                Ok(ActionRecord {
                    record_id,
                    filter_id: filter_id.to_string(),
                    comment_id,
                    action: serde_json::from_str(&action)?,
                    executed_at: parse_ts(&at)?,
                    status: if status == "executed" {
                        ActionStatus::Executed
                    } else {
                        ActionStatus::Failed
                    },
                    detail,
                })
            })
            .collect()
        })
    }

    // Jobs.

    pub fn put_job(&self, job: &JobRow) -> Result<()> {
        self.write(|tx| {
            tx.execute(
                "INSERT OR REPLACE INTO jobs (job_id, filter_id, state, body, updated_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![job.job_id, job.filter_id, job.state, job.body, ts(Utc::now())],
            )?;
            Ok(())
        })
    }

    pub fn jobs(&self) -> Result<Vec<JobRow>> {
        self.read(|c| {
            let mut stmt = c.prepare("SELECT job_id, filter_id, state, body FROM jobs ORDER BY job_id")?;
            let rows = stmt.query_map([], |r| {
                Ok(JobRow {
                    job_id: r.get(0)?,
                    filter_id: r.get(1)?,
                    state: r.get(2)?,
                    body: r.get(3)?,
                })
            })?;
            Ok(rows.collect::<rusqlite::Result<Vec<_>>>()?)
        })
    }

    // Ingest marks.

    pub fn ingest_mark(&self, source_id: &str) -> Result<Option<String>> {
        self.read(|c| {
            Ok(c.query_row("SELECT mark FROM ingest_marks WHERE source_id = ?1", [source_id], |r| r.get(0))
                .optional()?)
        })
    }

    pub fn set_ingest_mark(&self, source_id: &str, mark: &str) -> Result<()> {
        self.write(|tx| {
            tx.execute(
                "INSERT OR REPLACE INTO ingest_marks (source_id, mark, updated_at) VALUES (?1, ?2, ?3)",
                params![source_id, mark, ts(Utc::now())],
            )?;
            Ok(())
        })
    }

    /// Comments and the marks that record them, in one transaction.
    /// Returns the ids that were new.
    pub fn ingest_batch(&self, source_id: &str, comments: &[Comment], mark: Option<&str>) -> Result<Vec<CommentId>> {
        for c in comments {
            c.check().map_err(StoreError::Invalid)?;
        }
        self.write(|tx| {
            let mut added = Vec::new();
            {
                let mut stmt = tx
                    .prepare("INSERT OR IGNORE INTO comments (comment_id, published_at, body) VALUES (?1, ?2, ?3)")?;
                for c in comments {
                    if stmt.execute(params![c.id, ts(c.published_at), serde_json::to_string(c)?])? == 1 {
                        added.push(c.id.clone());
                    }
                }
            }
            if let Some(mark) = mark {
                tx.execute(
                    "INSERT OR REPLACE INTO ingest_marks (source_id, mark, updated_at) VALUES (?1, ?2, ?3)",
                    params![source_id, mark, ts(Utc::now())],
                )?;
            }
            Ok(added)
        })
    }

    // Export, import, compaction.

    pub fn export_filter(&self, filter_id: &str) -> Result<FilterExport> {
        let record = self.filter(filter_id)?;
        let labels = self
            .labels(filter_id)?
            .into_iter()
            .map(|label| {
                let comment = self
                    .comment(&label.comment_id)?
                    .ok_or_else(|| StoreError::NotFound(format!("comment {}", label.comment_id)))?;
                Ok(ExportedLabel { comment, label })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterExport {
            schema: EXPORT_SCHEMA.into(),
            filter_id: record.filter_id,
            name: record.name,
            versions: record.versions,
            labels,
        })
    }

    /// Imports a shared filter under `as_id` (or its own id). The lineage is
    /// checked before anything is written; the import is one transaction.
    pub fn import_filter(&self, doc: &FilterExport, as_id: Option<&str>) -> Result<FilterId> {
        if doc.schema != EXPORT_SCHEMA {
            return Err(StoreError::Invalid(format!("unsupported schema {:?}", doc.schema)));
        }
        if doc.versions.is_empty() {
            return Err(StoreError::Invalid("export has no versions".into()));
        }
        for (i, v) in doc.versions.iter().enumerate() {
            let expected_parent = if i == 0 { None } else { Some(i as u32) };
            if v.version != i as u32 + 1 || v.parent_version != expected_parent {
                return Err(StoreError::Invalid(format!("version chain broken at position {}", i + 1)));
            }
            if hash_prompt(v) != v.content_hash {
                return Err(StoreError::Invalid(format!("version {} hash does not match its content", v.version)));
            }
            let violations = validate_prompt(v);
            if !violations.is_empty() {
                return Err(StoreError::Invalid(violations.join("; ")));
            }
        }
        let filter_id = as_id.unwrap_or(&doc.filter_id).to_string();
        self.write(|tx| {
            let n = tx.execute(
                "INSERT OR IGNORE INTO filters (filter_id, name, created_at) VALUES (?1, ?2, ?3)",
                params![filter_id, doc.name, ts(Utc::now())],
            )?;
            if n == 0 {
                return Err(StoreError::Conflict(format!("filter {filter_id} exists")));
            }
            for v in &doc.versions {
                let mut stored = v.clone();
                stored.filter_id = filter_id.clone();
                tx.execute(
                    "INSERT INTO versions (filter_id, version, parent_version, content_hash, body, created_at)
                     VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
                    params![
                        filter_id,
                        stored.version,
                        stored.parent_version,
                        stored.content_hash,
                        serde_json::to_string(&stored)?,
                        ts(Utc::now())
                    ],
                )?;
            }
            for l in &doc.labels {
                l.comment.check().map_err(StoreError::Invalid)?;
                tx.execute(
                    "INSERT OR IGNORE INTO comments (comment_id, published_at, body) VALUES (?1, ?2, ?3)",
                    params![l.comment.id, ts(l.comment.published_at), serde_json::to_string(&l.comment)?],
                )?;
                Self::put_label_tx(tx, &filter_id, &l.label)?;
            }
            Ok(filter_id.clone())
        })
    }

    /// Drops cached predictions and explanations for prompts that are not a
    /// stored version (for example scored candidates nobody chose). With
    /// `latest_only`, older versions' entries go too.
    pub fn compact(&self, latest_only: bool) -> Result<CompactionReport> {
        let keep_sql = if latest_only {
            "SELECT v.content_hash FROM versions v
             WHERE v.version = (SELECT MAX(version) FROM versions w WHERE w.filter_id = v.filter_id)"
        } else {
            "SELECT content_hash FROM versions"
        };
        let report = self.write(|tx| {
            let predictions_removed =
                tx.execute(&format!("DELETE FROM predictions WHERE prompt_hash NOT IN ({keep_sql})"), [])? as u64;
            let explanations_removed =
                tx.execute(&format!("DELETE FROM explanations WHERE prompt_hash NOT IN ({keep_sql})"), [])? as u64;
            Ok(CompactionReport {
                predictions_removed,
                explanations_removed,
            })
        })?;
        self.read(|c| Ok(c.execute_batch("VACUUM")?))?;
        Ok(report)
    }
}

fn cache_err(e: impl std::fmt::Display) -> CacheError {
    CacheError(e.to_string())
}

impl PredictionCache for Store {
    fn cached_prediction(&self, prompt_hash: &str, comment_id: &str) -> std::result::Result<Option<Prediction>, CacheError> {
        let conn = self.conn.lock();
        let body: Option<String> = conn
            .query_row(
                "SELECT body FROM predictions WHERE prompt_hash = ?1 AND comment_id = ?2",
                params![prompt_hash, comment_id],
                |r| r.get(0),
            )
            .optional()
            .map_err(cache_err)?;
        body.map(|b| serde_json::from_str(&b).map_err(cache_err)).transpose()
    }

    fn put_cached(&self, prediction: &Prediction) -> std::result::Result<(), CacheError> {
        let body = serde_json::to_string(prediction).map_err(cache_err)?;
        self.conn
            .lock()
            .execute(
                "INSERT OR IGNORE INTO predictions (prompt_hash, comment_id, body) VALUES (?1, ?2, ?3)",
                params![prediction.prompt_hash, prediction.comment_id, body],
            )
            .map_err(cache_err)?;
        Ok(())
    }

    fn cached_explanation(&self, prompt_hash: &str, comment_id: &str) -> std::result::Result<Option<String>, CacheError> {
        self.conn
            .lock()
            .query_row(
                "SELECT text FROM explanations WHERE prompt_hash = ?1 AND comment_id = ?2",
                params![prompt_hash, comment_id],
                |r| r.get(0),
            )
            .optional()
            .map_err(cache_err)
    }

    fn put_explanation(&self, prompt_hash: &str, comment_id: &str, text: &str) -> std::result::Result<(), CacheError> {
        self.conn
            .lock()
            .execute(
                "INSERT OR IGNORE INTO explanations (prompt_hash, comment_id, text) VALUES (?1, ?2, ?3)",
                params![prompt_hash, comment_id, text],
            )
            .map_err(cache_err)?;
        Ok(())
    }
}
