//! Request and response bodies of the /v1 HTTP API.
//!
//! Shared by the server and the client. Domain types come from `sieve-core`
//! unchanged where their serde form is already the wire form.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use sieve_core::baseline::BaselineRound;
pub use sieve_core::optimizer::{FailurePattern, OptimizationBudget};
use sieve_core::sampler::Tier;
pub use sieve_core::store::{ActionRecord, ActionStatus, AuditStats, DailyCount, FilterExport, Window};
pub use sieve_core::{Comment, EditDiff, FilterPrompt, LabelSource, Metrics, MistakeRef, ModerationAction, Verdict};

pub const API_PREFIX: &str = "/v1";
pub const MAX_PAGE_SIZE: usize = 200;
pub const DEFAULT_PAGE_SIZE: usize = 50;

// Errors.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    NotFound,
    Conflict,
    Validation,
    PreconditionFailed,
    Upstream,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::NotFound => 404,
            ErrorCode::Conflict => 409,
            ErrorCode::Validation => 422,
            ErrorCode::PreconditionFailed => 412,
            ErrorCode::Upstream => 502,
            ErrorCode::Internal => 500,
        }
    }
}

/// Every non-2xx response carries this body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

// Health and comments.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub backend: String,
    pub comments: u64,
}

/// JSONL text, one comment per line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestRequest {
    pub jsonl: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub added: usize,
    pub duplicates: usize,
    pub skipped: Vec<SkippedLine>,
}

// Filters.

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateFilterRequest {
    /// Generated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_id: Option<String>,
    pub name: String,
    /// A short description of what to catch. Either this or `examples`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_action: Option<ModerationAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterView {
    pub filter_id: String,
    pub name: String,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_action: Option<ModerationAction>,
    pub prompt: FilterPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoActionRequest {
    pub action: Option<ModerationAction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionView {
    pub prompt: FilterPrompt,
    /// Edits from the parent version; empty for version 1.
    pub diff: Vec<EditDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricInput {
    /// Keeps an existing rubric's id and origin; new rubrics omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubric_id: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleInput {
    pub comment_text: String,
    pub verdict: Verdict,
}

/// A manual edit. Lands as a new version whose parent is `parent_version`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEditRequest {
    pub parent_version: u32,
    pub description: String,
    #[serde(default)]
    pub positive_rubrics: Vec<RubricInput>,
    #[serde(default)]
    pub negative_rubrics: Vec<RubricInput>,
    #[serde(default)]
    pub examples: Vec<ExampleInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptEditResponse {
    pub version: VersionView,
    /// The reclassification started for the new version.
    pub job_id: String,
}

// Labeling.

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelingPlanRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanItem {
    pub comment: Comment,
    pub tier: Tier,
    pub predicted: Verdict,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelingPlan {
    pub version: u32,
    pub prompt_hash: String,
    /// In the order they should be shown.
    pub items: Vec<PlanItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInput {
    pub comment_id: String,
    pub verdict: Verdict,
    /// Defaults to initialization. Audit labels also record an audit event
    /// against the current prediction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<LabelSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsRequest {
    pub labels: Vec<LabelInput>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub stored: usize,
    pub audits_recorded: usize,
    pub total_labels: usize,
}

// Jobs.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Initialize,
    OptimizeRound,
    BaselineRun,
    Reclassify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    AwaitingUserChoice,
    Done,
    Failed,
}

impl JobState {
    fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::AwaitingUserChoice => 2,
            JobState::Done | JobState::Failed => 3,
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }

    /// Forward moves only, plus resuming an awaiting job.
    pub fn can_move_to(self, next: JobState) -> bool {
        if self.is_terminal() {
            return false;
        }
        (self == JobState::AwaitingUserChoice && next == JobState::Running) || next.rank() > self.rank()
    }
}

/// How an optimize-round job should aim its candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GuidanceInput {
    Automatic,
    /// A pattern as returned by the failure-patterns endpoint.
    Pattern { pattern: FailurePattern },
    /// Fix one mistake: the user's clarified rationale for a labeled comment.
    Clarified { comment_id: String, rationale_text: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum JobRequest {
    Initialize {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<OptimizationBudget>,
    },
    OptimizeRound {
        guidance: GuidanceInput,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<OptimizationBudget>,
    },
    Baseline {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        budget: Option<OptimizationBudget>,
    },
    Reclassify,
}

impl JobRequest {
    pub fn kind(&self) -> JobKind {
        match self {
            JobRequest::Initialize { .. } => JobKind::Initialize,
            JobRequest::OptimizeRound { .. } => JobKind::OptimizeRound,
            JobRequest::Baseline { .. } => JobKind::BaselineRun,
            JobRequest::Reclassify => JobKind::Reclassify,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let budget = match self {
            JobRequest::Initialize { budget, .. }
            | JobRequest::OptimizeRound { budget, .. }
            | JobRequest::Baseline { budget, .. } => budget.as_ref(),
            JobRequest::Reclassify => None,
        };
        if let Some(b) = budget {
            b.check().map_err(|e| e.to_string())?;
        }
        if let JobRequest::OptimizeRound {
            guidance: GuidanceInput::Clarified { rationale_text, .. },
            ..
        } = self
        {
            if rationale_text.trim().is_empty() {
                return Err("a clarified mistake needs a rationale".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateView {
    /// Position in the ranking, from 1.
    pub rank: usize,
    pub diff: EditDiff,
    pub train_score: f64,
    /// `train_score` minus the incumbent's.
    pub score_delta: f64,
    pub metrics: Option<Metrics>,
    pub resolved: usize,
    pub introduced: usize,
    pub child_prompt: FilterPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JobResult {
    Initialized {
        version: u32,
        start_metrics: Metrics,
        best_metrics: Metrics,
    },
    Committed {
        version: u32,
        diff: Vec<EditDiff>,
    },
    NothingToFix {
        incumbent: Metrics,
    },
    NoCandidates,
    RejectedAll,
    Reclassified {
        version: u32,
        comments: usize,
        /// Comments that had no cached prediction for this version.
        requested: usize,
    },
    Baseline {
        prompt: String,
        metrics: Metrics,
        rounds: Vec<BaselineRound>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: String,
    pub filter_id: String,
    pub kind: JobKind,
    pub state: JobState,
    /// 0 to 1.
    pub progress: f64,
    pub request: JobRequest,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// Version the job started from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<JobResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Set on jobs cut short by a restart; starting the same request again is safe.
    #[serde(default)]
    pub resumable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "choice", rename_all = "snake_case")]
pub enum ResumeRequest {
    /// `rank` as listed in the job's candidates.
    Candidate { rank: usize },
    RejectAll,
}

// Predictions.

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionQuery {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audited: Option<bool>,
    /// Case-insensitive substring of the comment text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<String>,
    /// From 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explain: Option<bool>,
}

impl PredictionQuery {
    pub fn page(&self) -> usize {
        self.page.unwrap_or(1)
    }

    pub fn page_size(&self) -> usize {
        self.page_size.unwrap_or(DEFAULT_PAGE_SIZE)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.page() == 0 {
            return Err("page starts at 1".into());
        }
        if !(1..=MAX_PAGE_SIZE).contains(&self.page_size()) {
            return Err(format!("page_size must be between 1 and {MAX_PAGE_SIZE}"));
        }
        for c in [self.min_confidence, self.max_confidence].into_iter().flatten() {
            if !(0.0..=1.0).contains(&c) {
                return Err("confidence bounds must lie in [0, 1]".into());
            }
        }
        if let (Some(lo), Some(hi)) = (self.min_confidence, self.max_confidence) {
            if lo > hi {
                return Err("min_confidence exceeds max_confidence".into());
            }
        }
        Ok(())
    }

    /// Everything but pagination.
    pub fn matches(&self, item: &PredictionItem) -> bool {
        self.verdict.is_none_or(|v| v == item.verdict)
            && self.min_confidence.is_none_or(|lo| item.confidence >= lo - 1e-12)
            && self.max_confidence.is_none_or(|hi| item.confidence <= hi + 1e-12)
            && self.audited.is_none_or(|a| a == item.audit.is_some())
            && self
                .q
                .as_deref()
                .is_none_or(|q| item.comment.text.to_lowercase().contains(&q.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionItem {
    pub comment: Comment,
    pub verdict: Verdict,
    pub confidence: f64,
    /// The user's latest audit verdict, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPage {
    pub version: u32,
    pub prompt_hash: String,
    pub page: usize,
    pub page_size: usize,
    /// Matching items over all pages.
    pub total: usize,
    /// Stored comments with no prediction for this version yet.
    pub unclassified: usize,
    pub items: Vec<PredictionItem>,
}

// Iteration support.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailurePatternsResponse {
    pub version: u32,
    pub metrics: Metrics,
    pub mistakes: Vec<MistakeRef>,
    /// Largest first.
    pub patterns: Vec<FailurePattern>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RationalesRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalesResponse {
    pub mistake: MistakeRef,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionRequest {
    pub comment_id: String,
    pub action: ModerationAction,
}
