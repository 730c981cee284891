//! HTTP surface under `/v1`. Every failure renders the `ApiError` envelope.

use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Request, State};
use axum::http::request::Parts;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use sieve_api::{
    ActionRecord, ActionRequest, AuditStats, AutoActionRequest, CreateFilterRequest, FailurePatternsResponse, FilterExport,
    FilterView, Health, IngestReport, IngestRequest, Job, JobCreated, JobRequest, LabelingPlan, LabelingPlanRequest,
    LabelsRequest, LabelsResponse, PredictionPage, PredictionQuery, PromptEditRequest, PromptEditResponse,
    RationalesRequest, RationalesResponse, ResumeRequest, VersionView, Window,
};

use crate::error::{AppError, AppResult};
use crate::service::Service;

type Svc = State<Arc<Service>>;

/// `Json` whose rejections are validation errors in the API envelope.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = AppError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e: JsonRejection| AppError::validation(e.body_text()))
    }
}

pub struct ApiQuery<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequestParts<S> for ApiQuery<T> {
    type Rejection = AppError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        axum::extract::Query::<T>::from_request_parts(parts, state)
            .await
            .map(|q| ApiQuery(q.0))
            .map_err(|e: QueryRejection| AppError::validation(e.body_text()))
    }
}

pub fn router(service: Arc<Service>) -> Router {
    let v1 = Router::new()
        .route("/health", get(health))
        .route("/comments", post(ingest))
        .route("/filters", post(create_filter).get(list_filters))
        .route("/filters/import", post(import_filter))
        .route("/filters/{id}", get(get_filter))
        .route("/filters/{id}/auto-action", put(set_auto_action))
        .route("/filters/{id}/export", get(export_filter))
        .route("/filters/{id}/labeling-plan", post(labeling_plan))
        .route("/filters/{id}/labels", post(put_labels))
        .route("/filters/{id}/jobs", post(start_job).get(list_jobs))
        .route("/filters/{id}/predictions", get(predictions))
        .route("/filters/{id}/failure-patterns", get(failure_patterns))
        .route("/filters/{id}/mistakes/{cid}/rationales", post(rationales))
        .route("/filters/{id}/stats", get(stats))
        .route("/filters/{id}/actions", post(apply_action).get(list_actions))
        .route("/filters/{id}/prompt", put(edit_prompt))
        .route("/filters/{id}/versions", get(versions))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/resume", post(resume_job))
        .fallback(no_route);
    Router::new()
        .nest(sieve_api::API_PREFIX, v1)
        .fallback(no_route)
        .with_state(service)
}

async fn no_route() -> AppError {
    AppError::not_found("no such route")
}

async fn health(State(s): Svc) -> AppResult<Json<Health>> {
    s.health().map(Json)
}

async fn ingest(State(s): Svc, ApiJson(req): ApiJson<IngestRequest>) -> AppResult<Json<IngestReport>> {
    s.ingest_jsonl("api", &req.jsonl).await.map(Json)
}

async fn create_filter(State(s): Svc, ApiJson(req): ApiJson<CreateFilterRequest>) -> AppResult<Json<FilterView>> {
    s.create_filter(req).await.map(Json)
}

async fn list_filters(State(s): Svc) -> AppResult<Json<Vec<FilterView>>> {
    s.filters().map(Json)
}

#[derive(Deserialize)]
struct ImportQuery {
    as_id: Option<String>,
}

async fn import_filter(
    State(s): Svc,
    ApiQuery(q): ApiQuery<ImportQuery>,
    ApiJson(doc): ApiJson<FilterExport>,
) -> AppResult<Json<FilterView>> {
    s.import_filter(&doc, q.as_id.as_deref()).map(Json)
}

async fn get_filter(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<FilterView>> {
    s.filter(&id).map(Json)
}

async fn set_auto_action(
    State(s): Svc,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<AutoActionRequest>,
) -> AppResult<Json<FilterView>> {
    s.set_auto_action(&id, req).map(Json)
}

async fn export_filter(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<FilterExport>> {
    s.export_filter(&id).map(Json)
}

async fn labeling_plan(
    State(s): Svc,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<LabelingPlanRequest>,
) -> AppResult<Json<LabelingPlan>> {
    s.labeling_plan(&id, req).await.map(Json)
}

async fn put_labels(State(s): Svc, Path(id): Path<String>, ApiJson(req): ApiJson<LabelsRequest>) -> AppResult<Json<LabelsResponse>> {
    s.put_labels(&id, req).await.map(Json)
}

async fn start_job(State(s): Svc, Path(id): Path<String>, ApiJson(req): ApiJson<JobRequest>) -> AppResult<Json<JobCreated>> {
    s.start_job(&id, req).map(|j| Json(JobCreated { job_id: j.job_id }))
}

async fn list_jobs(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<Vec<Job>>> {
    s.jobs_for(&id).map(Json)
}

async fn get_job(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<Job>> {
    s.job(&id).map(Json)
}

async fn resume_job(State(s): Svc, Path(id): Path<String>, ApiJson(req): ApiJson<ResumeRequest>) -> AppResult<Json<Job>> {
    s.resume_job(&id, req).await.map(Json)
}

async fn predictions(
    State(s): Svc,
    Path(id): Path<String>,
    ApiQuery(q): ApiQuery<PredictionQuery>,
) -> AppResult<Json<PredictionPage>> {
    s.predictions(&id, q).await.map(Json)
}

#[derive(Deserialize)]
struct SeedQuery {
    seed: Option<u64>,
}

async fn failure_patterns(
    State(s): Svc,
    Path(id): Path<String>,
    ApiQuery(q): ApiQuery<SeedQuery>,
) -> AppResult<Json<FailurePatternsResponse>> {
    s.failure_patterns(&id, q.seed.unwrap_or(0)).await.map(Json)
}

async fn rationales(
    State(s): Svc,
    Path((id, cid)): Path<(String, String)>,
    ApiJson(req): ApiJson<RationalesRequest>,
) -> AppResult<Json<RationalesResponse>> {
    s.rationales(&id, &cid, req).await.map(Json)
}

#[derive(Deserialize)]
struct WindowQuery {
    from: Option<DateTime<Utc>>,
    until: Option<DateTime<Utc>>,
}

async fn stats(State(s): Svc, Path(id): Path<String>, ApiQuery(q): ApiQuery<WindowQuery>) -> AppResult<Json<AuditStats>> {
    if let (Some(f), Some(u)) = (q.from, q.until) {
        if f > u {
            return Err(AppError::validation("from must not be after until"));
        }
    }
    s.stats(
        &id,
        Window {
            from: q.from,
            until: q.until,
        },
    )
    .map(Json)
}

async fn apply_action(State(s): Svc, Path(id): Path<String>, ApiJson(req): ApiJson<ActionRequest>) -> AppResult<Json<ActionRecord>> {
    s.apply_action(&id, req).await.map(Json)
}

async fn list_actions(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<Vec<ActionRecord>>> {
    s.actions(&id).map(Json)
}

async fn edit_prompt(
    State(s): Svc,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<PromptEditRequest>,
) -> AppResult<Json<PromptEditResponse>> {
    s.edit_prompt(&id, req).await.map(Json)
}

async fn versions(State(s): Svc, Path(id): Path<String>) -> AppResult<Json<Vec<VersionView>>> {
    s.versions(&id).map(Json)
}
