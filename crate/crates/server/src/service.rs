//! The workflows behind the HTTP API: create, label, initialize, iterate,
//! audit and moderate. Handlers in `routes` are thin wrappers over this.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use dashmap::DashMap;

use sieve_api::{
    ActionRequest, AutoActionRequest, CandidateView, CreateFilterRequest, FailurePatternsResponse, FilterView, GuidanceInput,
    Health, IngestReport, Job, JobRequest, JobResult, JobState, LabelingPlan, LabelingPlanRequest, LabelsRequest,
    LabelsResponse, PlanItem, PredictionItem, PredictionPage, PredictionQuery, PromptEditRequest, PromptEditResponse,
    RationalesRequest, RationalesResponse, ResumeRequest, RubricInput, SkippedLine, VersionView,
};
use sieve_core::baseline::{Baseline, BaselineConfig, FreestylePrompt};
use sieve_core::classifier::{ClassifierConfig, Prediction};
use sieve_core::diff::diff_prompts;
use sieve_core::jsonl::read_comments;
use sieve_core::optimizer::{ClarifiedMistake, Guidance, OptimizationBudget, Optimizer, OptimizerConfig, RoundOutcome};
use sieve_core::render::DraftSeed;
use sieve_core::sampler::{select_for_labeling, DEFAULT_LABELING_K};
use sieve_core::store::{ActionRecord, ActionStatus, AuditEvent, AuditStats, FilterExport, Store, Window};
use sieve_core::{
    Classifier, Comment, CommentId, FewShotExample, FilterId, FilterPrompt, Gateway, Label, LabelSource, LabeledComment,
    Metrics, ModerationAction, Polarity, Rubric, RubricOrigin, Verdict,
};

use crate::error::{AppError, AppResult};
use crate::ingest::{plan_poll, HighWater, PollingAdapter};
use crate::jobs::JobRegistry;
use crate::moderation::{most_restrictive, ActionSink};

/// Most recent comments considered when building a labeling plan.
pub const LABELING_POOL: usize = 1000;
const RECLASSIFY_CHUNK: usize = 200;
const MAX_RATIONALES: usize = 10;
const DEFAULT_RATIONALES: usize = 3;

#[derive(Default)]
pub struct ServiceOptions {
    pub eval_seed: u64,
    pub templates: BTreeMap<String, String>,
}

enum Step {
    Done(JobResult),
    Await {
        base_version: u32,
        incumbent: Metrics,
        candidates: Vec<CandidateView>,
    },
}

pub struct Service {
    store: Arc<Store>,
    gateway: Arc<Gateway>,
    classifier: Classifier,
    optimizer: Optimizer,
    jobs: JobRegistry,
    locks: DashMap<FilterId, Arc<tokio::sync::Mutex<()>>>,
    sink: Arc<dyn ActionSink>,
    options: ServiceOptions,
}

impl Service {
    pub fn new(store: Arc<Store>, gateway: Arc<Gateway>, sink: Arc<dyn ActionSink>, options: ServiceOptions) -> AppResult<Arc<Self>> {
        let classifier = Classifier::with_config(gateway.clone(), store.clone(), ClassifierConfig::default());
        let optimizer = Optimizer::new(
            classifier.clone(),
            OptimizerConfig {
                eval_seed: options.eval_seed,
                ..OptimizerConfig::default()
            },
        );
        let jobs = JobRegistry::recover(store.clone())?;
        Ok(Arc::new(Self {
            store,
            gateway,
            classifier,
            optimizer,
            jobs,
            locks: DashMap::new(),
            sink,
            options,
        }))
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn filter_lock(&self, filter_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.entry(filter_id.to_string()).or_default().clone()
    }

    pub fn health(&self) -> AppResult<Health> {
        Ok(Health {
            status: "ok".into(),
            backend: self.gateway.backend_name().to_string(),
            comments: self.store.comment_count()?,
        })
    }

    // Filters and versions.

    pub async fn create_filter(&self, req: CreateFilterRequest) -> AppResult<FilterView> {
        if req.name.trim().is_empty() {
            return Err(AppError::validation("name is required"));
        }
        let seed = match (&req.description, req.examples.is_empty()) {
            (Some(d), _) if !d.trim().is_empty() => DraftSeed::Description(d.clone()),
            (_, false) => DraftSeed::Examples(req.examples.clone()),
            _ => return Err(AppError::validation("a description or example comments are required")),
        };
        let filter_id = match &req.filter_id {
            Some(id) if id.trim().is_empty() || id.contains('/') => return Err(AppError::validation("invalid filter id")),
            Some(id) => id.clone(),
            None => format!("f-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]),
        };
        if self.store.filter_exists(&filter_id)? {
            return Err(AppError::conflict(format!("filter {filter_id} exists")));
        }
        let description = self.optimizer.draft_description(&seed).await?;
        let v1 = FilterPrompt::draft(&filter_id, req.name.trim(), description);
        self.store.create_filter(&filter_id, req.name.trim())?;
        self.store.put_filter_version(&filter_id, &v1)?;
        if let Some(a) = &req.auto_action {
            self.store.set_auto_action(&filter_id, Some(a))?;
        }
        self.filter(&filter_id)
    }

    pub fn filter(&self, filter_id: &str) -> AppResult<FilterView> {
        let summary = self.store.filter_summary(filter_id)?;
        Ok(FilterView {
            filter_id: summary.filter_id,
            name: summary.name,
            created_at: summary.created_at,
            auto_action: summary.auto_action,
            prompt: self.store.latest_version(filter_id)?,
        })
    }

    pub fn filters(&self) -> AppResult<Vec<FilterView>> {
        self.store
            .list_filters()?
            .into_iter()
            .filter(|f| f.latest_version > 0)
            .map(|f| self.filter(&f.filter_id))
            .collect()
    }

    pub fn set_auto_action(&self, filter_id: &str, req: AutoActionRequest) -> AppResult<FilterView> {
        if let Some(ModerationAction::ReplyWithTemplate { template_id }) = &req.action {
            self.template(template_id)?;
        }
        self.store.set_auto_action(filter_id, req.action.as_ref())?;
        self.filter(filter_id)
    }

    pub fn versions(&self, filter_id: &str) -> AppResult<Vec<VersionView>> {
        let record = self.store.filter(filter_id)?;
        let mut out: Vec<VersionView> = Vec::with_capacity(record.versions.len());
        for (i, v) in record.versions.iter().enumerate() {
            let diff = match i {
                0 => Vec::new(),
                _ => diff_prompts(&record.versions[i - 1], v).map_err(|e| AppError::internal(e.to_string()))?,
            };
            out.push(VersionView { prompt: v.clone(), diff });
        }
        Ok(out)
    }

    /// A manual edit: lands as a new version, then reclassifies.
    pub async fn edit_prompt(self: &Arc<Self>, filter_id: &str, req: PromptEditRequest) -> AppResult<PromptEditResponse> {
        let lock = self.filter_lock(filter_id);
        let _guard = lock.lock().await;
        let latest = self.store.latest_version(filter_id)?;
        if req.parent_version != latest.version {
            return Err(AppError::conflict(format!(
                "parent_version {} is not the latest version {}",
                req.parent_version, latest.version
            )));
        }
        let child = build_edit(&latest, &req)?;
        let diff = diff_prompts(&latest, &child).map_err(|e| AppError::internal(e.to_string()))?;
        if diff.is_empty() {
            return Err(AppError::validation("the edit changes nothing"));
        }
        let version = self.store.put_filter_version(filter_id, &child)?;
        let prompt = self.store.version(filter_id, version)?;
        let job = self.enqueue(filter_id, JobRequest::Reclassify)?;
        Ok(PromptEditResponse {
            version: VersionView { prompt, diff },
            job_id: job.job_id,
        })
    }

    pub fn export_filter(&self, filter_id: &str) -> AppResult<FilterExport> {
        Ok(self.store.export_filter(filter_id)?)
    }

    pub fn import_filter(&self, doc: &FilterExport, as_id: Option<&str>) -> AppResult<FilterView> {
        let id = self.store.import_filter(doc, as_id)?;
        self.filter(&id)
    }

    // Labeling.

    pub async fn labeling_plan(&self, filter_id: &str, req: LabelingPlanRequest) -> AppResult<LabelingPlan> {
        let k = req.k.unwrap_or(DEFAULT_LABELING_K);
        if k == 0 {
            return Err(AppError::validation("k must be at least 1"));
        }
        let prompt = self.store.latest_version(filter_id)?;
        let mut pool = self.store.comments()?;
        pool.truncate(LABELING_POOL);
        if pool.is_empty() {
            return Err(AppError::precondition("no comments have been ingested"));
        }
        let predictions = self.classifier.classify(&prompt, &pool, self.options.eval_seed).await?;
        let labeled: HashSet<CommentId> = self.store.labels(filter_id)?.into_iter().map(|l| l.comment_id).collect();
        let plan = select_for_labeling(&predictions, &labeled, k, req.seed.unwrap_or(0));
        let by_id: HashMap<&str, (&Comment, &Prediction)> =
            pool.iter().zip(&predictions).map(|(c, p)| (c.id.as_str(), (c, p))).collect();
        let items = plan
            .iter()
            .map(|(id, tier)| {
                let (c, p) = by_id[id.as_str()];
                PlanItem {
                    comment: c.clone(),
                    tier,
                    predicted: p.verdict,
                    confidence: p.confidence,
                }
            })
            .collect();
        Ok(LabelingPlan {
            version: prompt.version,
            prompt_hash: prompt.content_hash,
            items,
        })
    }

    /// Current predictions for `comments` under `prompt`, classifying any
    /// that are not cached.
    async fn predict(&self, prompt: &FilterPrompt, comments: &[Comment]) -> AppResult<Vec<Prediction>> {
        if comments.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self.classifier.classify(prompt, comments, self.options.eval_seed).await?)
    }

    pub async fn put_labels(&self, filter_id: &str, req: LabelsRequest) -> AppResult<LabelsResponse> {
        if req.labels.is_empty() {
            return Err(AppError::validation("no labels supplied"));
        }
        let prompt = self.store.latest_version(filter_id)?;
        let mut audited = Vec::new();
        for l in &req.labels {
            let comment = self
                .store
                .comment(&l.comment_id)?
                .ok_or_else(|| AppError::not_found(format!("comment {}", l.comment_id)))?;
            if l.source == Some(LabelSource::Audit) {
                audited.push((comment, l.verdict));
            }
        }
        let now = chrono::Utc::now();
        let labels: Vec<Label> = req
            .labels
            .iter()
            .map(|l| Label {
                comment_id: l.comment_id.clone(),
                verdict: l.verdict,
                source: l.source.unwrap_or(LabelSource::Initialization),
                labeled_at: now,
            })
            .collect();
        // Predictions first, so a failed classification stores nothing.
        let comments: Vec<Comment> = audited.iter().map(|(c, _)| c.clone()).collect();
        let predictions = self.predict(&prompt, &comments).await?;
        self.store.put_labels(filter_id, &labels)?;
        for ((comment, verdict), p) in audited.iter().zip(&predictions) {
            self.store.record_audit(&AuditEvent {
                filter_id: filter_id.to_string(),
                comment_id: comment.id.clone(),
                user_verdict: *verdict,
                predicted: p.verdict,
                prompt_hash: prompt.content_hash.clone(),
                at: now,
            })?;
        }
        Ok(LabelsResponse {
            stored: labels.len(),
            audits_recorded: predictions.len(),
            total_labels: self.store.labels(filter_id)?.len(),
        })
    }

    fn labeled(&self, filter_id: &str) -> AppResult<Vec<LabeledComment>> {
        let labeled = self.store.labeled_comments(filter_id)?;
        if labeled.is_empty() {
            return Err(AppError::precondition(format!("filter {filter_id} has no labeled comments")));
        }
        Ok(labeled)
    }

    // Jobs.

    pub fn job(&self, job_id: &str) -> AppResult<Job> {
        self.jobs.get(job_id)
    }

    pub fn jobs_for(&self, filter_id: &str) -> AppResult<Vec<Job>> {
        self.store.latest_version(filter_id)?;
        Ok(self.jobs.list(Some(filter_id)))
    }

    pub fn start_job(self: &Arc<Self>, filter_id: &str, req: JobRequest) -> AppResult<Job> {
        req.validate().map_err(AppError::validation)?;
        self.store.latest_version(filter_id)?;
        match &req {
            JobRequest::Reclassify => {}
            JobRequest::OptimizeRound {
                guidance: GuidanceInput::Clarified { comment_id, .. },
                ..
            } => {
                if !self.labeled(filter_id)?.iter().any(|l| &l.comment.id == comment_id) {
                    return Err(AppError::precondition(format!("comment {comment_id} is not labeled")));
                }
            }
            _ => {
                self.labeled(filter_id)?;
            }
        }
        self.enqueue(filter_id, req)
    }

    fn enqueue(self: &Arc<Self>, filter_id: &str, req: JobRequest) -> AppResult<Job> {
        let job = self.jobs.create(filter_id, req)?;
        let svc = self.clone();
        let id = job.job_id.clone();
        tokio::spawn(async move { svc.run_job(id).await });
        Ok(job)
    }

    async fn run_job(self: Arc<Self>, job_id: String) {
        let Ok(job) = self.jobs.get(&job_id) else { return };
        let lock = self.filter_lock(&job.filter_id);
        // Reclassification reads a committed version and needs no lock.
        let _guard = match job.request {
            JobRequest::Reclassify => None,
            _ => Some(lock.lock().await),
        };
        if let Err(e) = self.jobs.update(&job_id, |j| j.state = JobState::Running) {
            tracing::warn!(job = %job_id, error = %e, "job could not start");
            return;
        }
        let outcome = self.execute(&job).await;
        let result = match outcome {
            Ok(Step::Done(result)) => {
                let commit = matches!(result, JobResult::Committed { .. } | JobResult::Initialized { .. });
                let r = self.jobs.update(&job_id, |j| {
                    j.state = JobState::Done;
                    j.progress = 1.0;
                    j.result = Some(result);
                });
                if commit && r.is_ok() {
                    let _ = self.enqueue(&job.filter_id, JobRequest::Reclassify);
                }
                r
            }
            Ok(Step::Await {
                base_version,
                incumbent,
                candidates,
            }) => self.jobs.update(&job_id, |j| {
                j.state = JobState::AwaitingUserChoice;
                j.progress = 1.0;
                j.base_version = Some(base_version);
                j.incumbent = Some(incumbent);
                j.candidates = candidates;
            }),
            Err(e) => self.jobs.fail(&job_id, e.0.message),
        };
        if let Err(e) = result {
            tracing::error!(job = %job_id, error = %e, "job state could not be saved");
        }
    }

    fn progress(&self, job_id: &str, p: f64) {
        let _ = self.jobs.update(job_id, |j| j.progress = p.clamp(0.0, 1.0));
    }

    async fn execute(&self, job: &Job) -> AppResult<Step> {
        let filter_id = job.filter_id.as_str();
        let latest = self.store.latest_version(filter_id)?;
        match &job.request {
            JobRequest::Reclassify => {
                let comments = self.store.comments()?;
                let cached = self.store.predictions_for(&latest.content_hash)?;
                let requested = comments.iter().filter(|c| !cached.contains_key(&c.id)).count();
                for (i, chunk) in comments.chunks(RECLASSIFY_CHUNK).enumerate() {
                    self.predict(&latest, chunk).await?;
                    self.progress(&job.job_id, ((i + 1) * RECLASSIFY_CHUNK) as f64 / comments.len() as f64);
                }
                Ok(Step::Done(JobResult::Reclassified {
                    version: latest.version,
                    comments: comments.len(),
                    requested,
                }))
            }
            JobRequest::Initialize { seed, budget } => {
                let labeled = self.labeled(filter_id)?;
                let budget = budget.unwrap_or_else(OptimizationBudget::automatic);
                let outcome = self
                    .optimizer
                    .complete_initialization(&latest, labeled, &budget, seed.unwrap_or(0))
                    .await?;
                let version = self.store.put_filter_version(filter_id, &outcome.v2)?;
                Ok(Step::Done(JobResult::Initialized {
                    version,
                    start_metrics: outcome.search.start_metrics,
                    best_metrics: outcome.search.best_metrics,
                }))
            }
            JobRequest::OptimizeRound { guidance, seed, budget } => {
                let labeled = self.labeled(filter_id)?;
                let guidance = match guidance {
                    GuidanceInput::Automatic => Guidance::Automatic,
                    GuidanceInput::Pattern { pattern } => Guidance::Pattern { pattern: pattern.clone() },
                    GuidanceInput::Clarified {
                        comment_id,
                        rationale_text,
                    } => {
                        let evaluation = self.optimizer.evaluate(&latest, &labeled).await?;
                        let mistake = evaluation
                            .mistakes
                            .iter()
                            .find(|m| &m.comment.id == comment_id)
                            .ok_or_else(|| AppError::precondition(format!("comment {comment_id} is classified correctly")))?;
                        Guidance::Clarified {
                            clarified: ClarifiedMistake {
                                mistake: mistake.reference(),
                                rationale_text: rationale_text.clone(),
                            },
                        }
                    }
                };
                self.progress(&job.job_id, 0.2);
                let budget = budget.unwrap_or_default();
                let outcome = self
                    .optimizer
                    .optimize_round(&latest, &labeled, &guidance, &budget, seed.unwrap_or(0))
                    .await?;
                match outcome {
                    RoundOutcome::NothingToFix { incumbent } => Ok(Step::Done(JobResult::NothingToFix { incumbent })),
                    RoundOutcome::Ranked(ranked) => {
                        let shown = ranked.surfaced(self.optimizer.config().surfaced);
                        if shown.is_empty() {
                            return Ok(Step::Done(JobResult::NoCandidates));
                        }
                        let base = ranked.incumbent_score();
                        let candidates = shown
                            .iter()
                            .enumerate()
                            .map(|(i, c)| CandidateView {
                                rank: i + 1,
                                diff: c.diff.clone(),
                                train_score: c.train_score,
                                score_delta: c.train_score - base,
                                metrics: c.metrics,
                                resolved: c.resolved,
                                introduced: c.introduced,
                                child_prompt: c.child_prompt.clone(),
                            })
                            .collect();
                        Ok(Step::Await {
                            base_version: latest.version,
                            incumbent: ranked.incumbent,
                            candidates,
                        })
                    }
                }
            }
            JobRequest::Baseline { seed, budget } => {
                let labeled = self.labeled(filter_id)?;
                let baseline = Baseline::new(
                    self.classifier.clone(),
                    BaselineConfig {
                        eval_seed: self.options.eval_seed,
                        ..BaselineConfig::default()
                    },
                );
                let budget = budget.unwrap_or(OptimizationBudget {
                    rounds: 3,
                    ..OptimizationBudget::default()
                });
                let result = baseline
                    .optimize(
                        &FreestylePrompt::new(latest.description.clone()),
                        &labeled,
                        &budget,
                        None,
                        seed.unwrap_or(0),
                    )
                    .await?;
                if let Some(e) = result.error {
                    return Err(AppError::new(sieve_api::ErrorCode::Upstream, e));
                }
                Ok(Step::Done(JobResult::Baseline {
                    prompt: result.best.text,
                    metrics: result.best_metrics,
                    rounds: result.rounds,
                }))
            }
        }
    }

    /// Commits the chosen candidate or closes the job without a change.
    pub async fn resume_job(self: &Arc<Self>, job_id: &str, choice: ResumeRequest) -> AppResult<Job> {
        let job = self.jobs.get(job_id)?;
        if job.state != JobState::AwaitingUserChoice {
            return Err(AppError::conflict(format!("job {job_id} is not awaiting a choice")));
        }
        if let ResumeRequest::Candidate { rank } = choice {
            if rank == 0 || rank > job.candidates.len() {
                return Err(AppError::validation(format!(
                    "rank must be between 1 and {}",
                    job.candidates.len()
                )));
            }
        }
        let lock = self.filter_lock(&job.filter_id);
        let _guard = lock.lock().await;
        let job = self.jobs.claim_awaiting(job_id)?;
        let ResumeRequest::Candidate { rank } = choice else {
            return self.jobs.update(job_id, |j| {
                j.state = JobState::Done;
                j.result = Some(JobResult::RejectedAll);
            });
        };
        let chosen = &job.candidates[rank - 1].child_prompt;
        let committed = self.store.put_filter_version(&job.filter_id, chosen).and_then(|v| {
            let parent = self.store.version(&job.filter_id, v - 1)?;
            let child = self.store.version(&job.filter_id, v)?;
            Ok((v, diff_prompts(&parent, &child).map_err(|e| sieve_core::store::StoreError::Invalid(e.to_string()))?))
        });
        match committed {
            Ok((version, diff)) => {
                let done = self.jobs.update(job_id, |j| {
                    j.state = JobState::Done;
                    j.result = Some(JobResult::Committed { version, diff });
                })?;
                self.enqueue(&job.filter_id, JobRequest::Reclassify)?;
                Ok(done)
            }
            Err(e) => {
                let err = AppError::from(e);
                self.jobs.fail(job_id, err.0.message.clone())?;
                Err(err)
            }
        }
    }

    // Review.

    pub async fn predictions(&self, filter_id: &str, query: PredictionQuery) -> AppResult<PredictionPage> {
        query.validate().map_err(AppError::validation)?;
        let prompt = self.store.latest_version(filter_id)?;
        let predictions = self.store.predictions_for(&prompt.content_hash)?;
        let mut audits: HashMap<CommentId, Verdict> = HashMap::new();
        for e in self.store.audits(filter_id)? {
            audits.insert(e.comment_id, e.user_verdict);
        }
        let mut unclassified = 0;
        let mut matching = Vec::new();
        for comment in self.store.comments()? {
            let Some(p) = predictions.get(&comment.id) else {
                unclassified += 1;
                continue;
            };
            let item = PredictionItem {
                audit: audits.get(&comment.id).copied(),
                verdict: p.verdict,
                confidence: p.confidence,
                comment,
                explanation: None,
            };
            if query.matches(&item) {
                matching.push(item);
            }
        }
        let total = matching.len();
        let (page, size) = (query.page(), query.page_size());
        let mut items: Vec<PredictionItem> = matching.into_iter().skip((page - 1) * size).take(size).collect();
        if query.explain == Some(true) {
            for item in &mut items {
                item.explanation = Some(self.classifier.explain(&prompt, &item.comment, item.verdict).await?);
            }
        }
        Ok(PredictionPage {
            version: prompt.version,
            prompt_hash: prompt.content_hash,
            page,
            page_size: size,
            total,
            unclassified,
            items,
        })
    }

    pub async fn failure_patterns(&self, filter_id: &str, seed: u64) -> AppResult<FailurePatternsResponse> {
        let prompt = self.store.latest_version(filter_id)?;
        let labeled = self.labeled(filter_id)?;
        let analysis = self.optimizer.analyze_failures(&prompt, &labeled, seed).await?;
        Ok(FailurePatternsResponse {
            version: prompt.version,
            metrics: analysis.metrics,
            mistakes: analysis.mistakes.iter().map(|m| m.reference()).collect(),
            patterns: analysis.patterns,
        })
    }

    pub async fn rationales(&self, filter_id: &str, comment_id: &str, req: RationalesRequest) -> AppResult<RationalesResponse> {
        let n = req.n.unwrap_or(DEFAULT_RATIONALES);
        if !(1..=MAX_RATIONALES).contains(&n) {
            return Err(AppError::validation(format!("n must be between 1 and {MAX_RATIONALES}")));
        }
        let prompt = self.store.latest_version(filter_id)?;
        let labeled = self.labeled(filter_id)?;
        if !labeled.iter().any(|l| l.comment.id == comment_id) {
            return Err(AppError::precondition(format!("comment {comment_id} is not labeled")));
        }
        let evaluation = self.optimizer.evaluate(&prompt, &labeled).await?;
        let mistake = evaluation
            .mistakes
            .iter()
            .find(|m| m.comment.id == comment_id)
            .ok_or_else(|| AppError::precondition(format!("comment {comment_id} is classified correctly")))?;
        let candidates = self.optimizer.rationale_candidates(&prompt, mistake, n).await?;
        Ok(RationalesResponse {
            mistake: mistake.reference(),
            candidates,
        })
    }

    pub fn stats(&self, filter_id: &str, window: Window) -> AppResult<AuditStats> {
        Ok(self.store.audit_stats(filter_id, window)?)
    }

    // Moderation.

    fn template(&self, template_id: &str) -> AppResult<&str> {
        self.options
            .templates
            .get(template_id)
            .map(String::as_str)
            .ok_or_else(|| AppError::validation(format!("unknown template {template_id}")))
    }

    pub async fn apply_action(&self, filter_id: &str, req: ActionRequest) -> AppResult<ActionRecord> {
        let prompt = self.store.latest_version(filter_id)?;
        let comment = self
            .store
            .comment(&req.comment_id)?
            .ok_or_else(|| AppError::not_found(format!("comment {}", req.comment_id)))?;
        if let ModerationAction::ReplyWithTemplate { template_id } = &req.action {
            self.template(template_id)?;
        }
        if req.action != ModerationAction::DoNothing {
            let p = self.predict(&prompt, std::slice::from_ref(&comment)).await?;
            if p[0].verdict != Verdict::Catch {
                return Err(AppError::precondition(format!(
                    "filter {filter_id} did not catch comment {}",
                    comment.id
                )));
            }
        }
        self.dispatch(filter_id, &comment, &req.action).await
    }

    async fn dispatch(&self, filter_id: &str, comment: &Comment, action: &ModerationAction) -> AppResult<ActionRecord> {
        let template = match action {
            ModerationAction::ReplyWithTemplate { template_id } => Some(self.template(template_id)?),
            _ => None,
        };
        let (status, detail) = match self.sink.execute(comment, action, template).await {
            Ok(()) => (ActionStatus::Executed, None),
            Err(e) => {
                tracing::warn!(sink = self.sink.name(), comment = %comment.id, error = %e, "action failed");
                (ActionStatus::Failed, Some(e))
            }
        };
        Ok(self.store.record_action(filter_id, &comment.id, action, status, detail.as_deref())?)
    }

    pub fn actions(&self, filter_id: &str) -> AppResult<Vec<ActionRecord>> {
        self.store.latest_version(filter_id)?;
        Ok(self.store.actions(filter_id)?)
    }

    /// Applies configured actions to newly ingested comments. A comment caught
    /// by several filters gets the most restrictive of their actions.
    pub async fn moderate_new(&self, ids: &[CommentId]) -> AppResult<Vec<ActionRecord>> {
        let filters: Vec<(FilterId, ModerationAction)> = self
            .store
            .list_filters()?
            .into_iter()
            .filter(|f| f.latest_version > 0)
            .filter_map(|f| f.auto_action.map(|a| (f.filter_id, a)))
            .collect();
        if filters.is_empty() || ids.is_empty() {
            return Ok(Vec::new());
        }
        let mut comments = Vec::with_capacity(ids.len());
        for id in ids {
            if let Some(c) = self.store.comment(id)? {
                comments.push(c);
            }
        }
        let mut caught: BTreeMap<CommentId, Vec<(FilterId, ModerationAction)>> = BTreeMap::new();
        for (filter_id, action) in &filters {
            let prompt = self.store.latest_version(filter_id)?;
            for p in self.predict(&prompt, &comments).await? {
                if p.verdict == Verdict::Catch {
                    caught.entry(p.comment_id).or_default().push((filter_id.clone(), action.clone()));
                }
            }
        }
        let mut records = Vec::new();
        for c in &comments {
            let Some(cands) = caught.get(&c.id) else { continue };
            let Some(((filter_id, action), conflict)) = most_restrictive(cands) else { continue };
            if conflict {
                tracing::warn!(comment = %c.id, chosen = %filter_id, ?action, filters = ?cands, "filters disagree on the action");
            }
            records.push(self.dispatch(&filter_id, c, &action).await?);
        }
        Ok(records)
    }

    // Ingestion.

    pub async fn ingest_jsonl(&self, source_id: &str, text: &str) -> AppResult<IngestReport> {
        let parsed = read_comments(text.as_bytes()).map_err(|e| AppError::validation(e.to_string()))?;
        let total = parsed.comments.len();
        let added = self.store.ingest_batch(source_id, &parsed.comments, None)?;
        self.moderate_new(&added).await?;
        Ok(IngestReport {
            added: added.len(),
            duplicates: total - added.len(),
            skipped: parsed
                .skipped
                .into_iter()
                .map(|(line, reason)| SkippedLine { line, reason })
                .collect(),
        })
    }

    pub async fn poll_source(&self, adapter: &dyn PollingAdapter) -> AppResult<IngestReport> {
        let source = adapter.source_id();
        let mark = self.store.ingest_mark(source)?.and_then(|m| HighWater::decode(&m));
        let fetched = adapter
            .fetch(mark.as_ref())
            .await
            .map_err(|e| AppError::new(sieve_api::ErrorCode::Upstream, e))?;
        let (take, next) = plan_poll(fetched.comments, mark.as_ref());
        let added = self
            .store
            .ingest_batch(source, &take, next.map(|m| m.encode()).as_deref())?;
        self.moderate_new(&added).await?;
        Ok(IngestReport {
            added: added.len(),
            duplicates: take.len() - added.len(),
            skipped: fetched
                .skipped
                .into_iter()
                .map(|(line, reason)| SkippedLine { line, reason })
                .collect(),
        })
    }
}

/// The prompt a manual edit describes, as the next version of `latest`.
fn build_edit(latest: &FilterPrompt, req: &PromptEditRequest) -> AppResult<FilterPrompt> {
    let mut child = latest.next_version();
    child.description = req.description.trim().to_string();
    let mut used: HashSet<String> = latest.all_rubrics().map(|r| r.rubric_id.clone()).collect();
    for (polarity, inputs) in [
        (Polarity::Positive, &req.positive_rubrics),
        (Polarity::Negative, &req.negative_rubrics),
    ] {
        let mut out = Vec::with_capacity(inputs.len());
        for RubricInput { rubric_id, text } in inputs {
            let text = text.trim().to_string();
            let rubric = match rubric_id {
                Some(id) => {
                    let old = latest
                        .rubrics(polarity)
                        .iter()
                        .find(|r| &r.rubric_id == id)
                        .ok_or_else(|| AppError::validation(format!("unknown {} rubric {id}", polarity.as_str())))?;
                    Rubric {
                        origin: if old.text == text {
                            old.origin
                        } else {
                            RubricOrigin::Iteration(child.version)
                        },
                        text,
                        ..old.clone()
                    }
                }
                None => {
                    let prefix = if polarity == Polarity::Positive { "p" } else { "n" };
                    let id = (1..).map(|n| format!("{prefix}{n}")).find(|id| !used.contains(id)).expect("unbounded");
                    used.insert(id.clone());
                    Rubric {
                        rubric_id: id,
                        polarity,
                        text,
                        origin: RubricOrigin::Iteration(child.version),
                    }
                }
            };
            out.push(rubric);
        }
        *child.rubrics_mut(polarity) = out;
    }
    let ids: Vec<&str> = child.all_rubrics().map(|r| r.rubric_id.as_str()).collect();
    if ids.len() != ids.iter().collect::<HashSet<_>>().len() {
        return Err(AppError::validation("a rubric id appears twice"));
    }
    child.examples = req
        .examples
        .iter()
        .map(|e| FewShotExample {
            comment_text: e.comment_text.trim().to_string(),
            verdict: e.verdict,
            rationale: None,
        })
        .collect();
    child.rehash();
    let violations = sieve_core::validate_prompt(&child);
    if !violations.is_empty() {
        return Err(AppError::validation(violations.join("; ")));
    }
    Ok(child)
}
