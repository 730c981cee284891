//! Typed client for the filter service's `/v1` API.

use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

use sieve_api::*;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error envelope.
    #[error("{status}: {error}")]
    Api { status: u16, error: ApiError },
    #[error("transport: {0}")]
    Transport(String),
    #[error("decode: {0}")]
    Decode(String),
}

impl ClientError {
    pub fn code(&self) -> Option<ErrorCode> {
        match self {
            ClientError::Api { error, .. } => Some(error.code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base_url` is the server root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: base_url.into().trim_end_matches('/').to_string(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}{}", self.base, API_PREFIX, path)
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T> {
        let resp = req.send().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            let error = serde_json::from_slice::<ApiError>(&bytes).unwrap_or_else(|_| {
                ApiError::new(ErrorCode::Internal, String::from_utf8_lossy(&bytes).into_owned())
            });
            return Err(ClientError::Api {
                status: status.as_u16(),
                error,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.send(self.http.get(self.url(path))).await
    }

    async fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.http.post(self.url(path)).json(body)).await
    }

    async fn put<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.http.put(self.url(path)).json(body)).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn ingest(&self, jsonl: impl Into<String>) -> Result<IngestReport> {
        self.post("/comments", &IngestRequest { jsonl: jsonl.into() }).await
    }

    pub async fn create_filter(&self, req: &CreateFilterRequest) -> Result<FilterView> {
        self.post("/filters", req).await
    }

    pub async fn filters(&self) -> Result<Vec<FilterView>> {
        self.get("/filters").await
    }

    pub async fn filter(&self, id: &str) -> Result<FilterView> {
        self.get(&format!("/filters/{id}")).await
    }

    pub async fn set_auto_action(&self, id: &str, action: Option<ModerationAction>) -> Result<FilterView> {
        self.put(&format!("/filters/{id}/auto-action"), &AutoActionRequest { action }).await
    }

    pub async fn export_filter(&self, id: &str) -> Result<FilterExport> {
        self.get(&format!("/filters/{id}/export")).await
    }

    pub async fn import_filter(&self, doc: &FilterExport, as_id: Option<&str>) -> Result<FilterView> {
        let mut req = self.http.post(self.url("/filters/import")).json(doc);
        if let Some(id) = as_id {
            req = req.query(&[("as_id", id)]);
        }
        self.send(req).await
    }

    pub async fn labeling_plan(&self, id: &str, req: &LabelingPlanRequest) -> Result<LabelingPlan> {
        self.post(&format!("/filters/{id}/labeling-plan"), req).await
    }

    pub async fn put_labels(&self, id: &str, labels: Vec<LabelInput>) -> Result<LabelsResponse> {
        self.post(&format!("/filters/{id}/labels"), &LabelsRequest { labels }).await
    }

    pub async fn start_job(&self, id: &str, req: &JobRequest) -> Result<JobCreated> {
        self.post(&format!("/filters/{id}/jobs"), req).await
    }

    pub async fn jobs(&self, id: &str) -> Result<Vec<Job>> {
        self.get(&format!("/filters/{id}/jobs")).await
    }

    pub async fn job(&self, job_id: &str) -> Result<Job> {
        self.get(&format!("/jobs/{job_id}")).await
    }

    /// Polls until the job leaves Queued/Running or `timeout` passes.
    pub async fn wait_job(&self, job_id: &str, timeout: Duration) -> Result<Job> {
        let start = Instant::now();
        loop {
            let job = self.job(job_id).await?;
            if !matches!(job.state, JobState::Queued | JobState::Running) || start.elapsed() > timeout {
                return Ok(job);
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    pub async fn resume(&self, job_id: &str, choice: &ResumeRequest) -> Result<Job> {
        self.post(&format!("/jobs/{job_id}/resume"), choice).await
    }

    pub async fn predictions(&self, id: &str, query: &PredictionQuery) -> Result<PredictionPage> {
        self.send(self.http.get(self.url(&format!("/filters/{id}/predictions"))).query(query))
            .await
    }

    pub async fn failure_patterns(&self, id: &str, seed: u64) -> Result<FailurePatternsResponse> {
        self.get(&format!("/filters/{id}/failure-patterns?seed={seed}")).await
    }

    pub async fn rationales(&self, id: &str, comment_id: &str, n: Option<usize>) -> Result<RationalesResponse> {
        self.post(&format!("/filters/{id}/mistakes/{comment_id}/rationales"), &RationalesRequest { n })
            .await
    }

    pub async fn stats(&self, id: &str, window: Window) -> Result<AuditStats> {
        let mut q = Vec::new();
        if let Some(f) = window.from {
            q.push(("from", f.to_rfc3339()));
        }
        if let Some(u) = window.until {
            q.push(("until", u.to_rfc3339()));
        }
        self.send(self.http.get(self.url(&format!("/filters/{id}/stats"))).query(&q))
            .await
    }

    pub async fn apply_action(&self, id: &str, req: &ActionRequest) -> Result<ActionRecord> {
        self.post(&format!("/filters/{id}/actions"), req).await
    }

    pub async fn actions(&self, id: &str) -> Result<Vec<ActionRecord>> {
        self.get(&format!("/filters/{id}/actions")).await
    }

    pub async fn edit_prompt(&self, id: &str, req: &PromptEditRequest) -> Result<PromptEditResponse> {
        self.put(&format!("/filters/{id}/prompt"), req).await
    }

    pub async fn versions(&self, id: &str) -> Result<Vec<VersionView>> {
        self.get(&format!("/filters/{id}/versions")).await
    }
}
