//! In-memory job registry mirrored to the store.
//!
//! Every state change is persisted before it becomes visible. On startup,
//! jobs that were queued or running are failed with `resumable` set; jobs
//! awaiting a user choice keep waiting.

use std::sync::Arc;

use chrono::Utc;
use dashmap::DashMap;

use sieve_api::{Job, JobRequest, JobState};
use sieve_core::store::{JobRow, Store};

use crate::error::{AppError, AppResult};

pub const RESTART_MESSAGE: &str = "interrupted by a restart";

pub struct JobRegistry {
    store: Arc<Store>,
    jobs: DashMap<String, Job>,
}

fn state_name(s: JobState) -> &'static str {
    match s {
        JobState::Queued => "queued",
        JobState::Running => "running",
        JobState::AwaitingUserChoice => "awaiting_user_choice",
        JobState::Done => "done",
        JobState::Failed => "failed",
    }
}

impl JobRegistry {
    /// Loads persisted jobs, failing the ones a restart cut short.
    pub fn recover(store: Arc<Store>) -> AppResult<Self> {
        let jobs = DashMap::new();
        let registry = Self { store, jobs };
        for row in registry.store.jobs()? {
            let mut job: Job = match serde_json::from_str(&row.body) {
                Ok(j) => j,
                Err(e) => {
                    tracing::warn!(job = %row.job_id, error = %e, "skipping unreadable job");
                    continue;
                }
            };
            if matches!(job.state, JobState::Queued | JobState::Running) {
                job.state = JobState::Failed;
                job.error = Some(RESTART_MESSAGE.into());
                job.resumable = true;
                job.updated_at = Utc::now();
                registry.persist(&job)?;
            }
            registry.jobs.insert(job.job_id.clone(), job);
        }
        Ok(registry)
    }

    fn persist(&self, job: &Job) -> AppResult<()> {
        let body = serde_json::to_string(job).map_err(|e| AppError::internal(e.to_string()))?;
        self.store.put_job(&JobRow {
            job_id: job.job_id.clone(),
            filter_id: Some(job.filter_id.clone()),
            state: state_name(job.state).into(),
            body,
        })?;
        Ok(())
    }

    pub fn create(&self, filter_id: &str, request: JobRequest) -> AppResult<Job> {
        let now = Utc::now();
        let job = Job {
            job_id: uuid::Uuid::new_v4().to_string(),
            filter_id: filter_id.to_string(),
            kind: request.kind(),
            state: JobState::Queued,
            progress: 0.0,
            request,
            created_at: now,
            updated_at: now,
            base_version: None,
            incumbent: None,
            candidates: Vec::new(),
            result: None,
            error: None,
            resumable: false,
        };
        self.persist(&job)?;
        self.jobs.insert(job.job_id.clone(), job.clone());
        Ok(job)
    }

    pub fn get(&self, job_id: &str) -> AppResult<Job> {
        self.jobs
            .get(job_id)
            .map(|j| j.clone())
            .ok_or_else(|| AppError::not_found(format!("job {job_id}")))
    }

    pub fn list(&self, filter_id: Option<&str>) -> Vec<Job> {
        let mut out: Vec<Job> = self
            .jobs
            .iter()
            .filter(|j| filter_id.is_none_or(|f| j.filter_id == f))
            .map(|j| j.clone())
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.job_id.cmp(&b.job_id)));
        out
    }

    /// Applies `f` and persists. A state change must be a legal transition.
    pub fn update(&self, job_id: &str, f: impl FnOnce(&mut Job)) -> AppResult<Job> {
        let mut entry = self
            .jobs
            .get_mut(job_id)
            .ok_or_else(|| AppError::not_found(format!("job {job_id}")))?;
        let mut next = entry.clone();
        f(&mut next);
        if next.state != entry.state && !entry.state.can_move_to(next.state) {
            return Err(AppError::conflict(format!(
                "job {job_id} cannot move from {} to {}",
                state_name(entry.state),
                state_name(next.state)
            )));
        }
        next.updated_at = Utc::now();
        self.persist(&next)?;
        *entry = next.clone();
        Ok(next)
    }

    /// Moves an awaiting job back to running; the caller then finishes it.
    pub fn claim_awaiting(&self, job_id: &str) -> AppResult<Job> {
        let mut claimed = false;
        let job = self.update(job_id, |j| {
            if j.state == JobState::AwaitingUserChoice {
                j.state = JobState::Running;
                claimed = true;
            }
        })?;
        if !claimed {
            return Err(AppError::conflict(format!(
                "job {job_id} is {} and not awaiting a choice",
                state_name(job.state)
            )));
        }
        Ok(job)
    }

    pub fn fail(&self, job_id: &str, error: impl Into<String>) -> AppResult<Job> {
        let error = error.into();
        self.update(job_id, |j| {
            j.state = JobState::Failed;
            j.error = Some(error);
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sieve_api::JobResult;

    fn registry(store: &Arc<Store>) -> JobRegistry {
        JobRegistry::recover(store.clone()).unwrap()
    }

    #[test]
    fn transitions_are_enforced_and_persisted() {
        let store = Arc::new(Store::open_in_memory().unwrap());
        let r = registry(&store);
        let j = r.create("f", JobRequest::Reclassify).unwrap();
        assert_eq!(j.state, JobState::Queued);
        r.update(&j.job_id, |j| j.state = JobState::Running).unwrap();
        assert_eq!(r.claim_awaiting(&j.job_id).unwrap_err().code(), sieve_api::ErrorCode::Conflict);
        r.update(&j.job_id, |j| j.state = JobState::AwaitingUserChoice).unwrap();
        r.claim_awaiting(&j.job_id).unwrap();
        r.update(&j.job_id, |j| {
            j.state = JobState::Done;
            j.result = Some(JobResult::RejectedAll);
        })
        .unwrap();
        let err = r.update(&j.job_id, |j| j.state = JobState::Running).unwrap_err();
        assert_eq!(err.code(), sieve_api::ErrorCode::Conflict);
        assert_eq!(r.get(&j.job_id).unwrap().state, JobState::Done);
        assert_eq!(r.get("nope").unwrap_err().code(), sieve_api::ErrorCode::NotFound);
    }

    #[test]
    fn restart_fails_running_and_keeps_the_rest() {
        let store = Arc::new(Store::open_in_memory().unwrap());
        let r = registry(&store);
        let running = r.create("f", JobRequest::Reclassify).unwrap();
        r.update(&running.job_id, |j| j.state = JobState::Running).unwrap();
        let queued = r.create("f", JobRequest::Reclassify).unwrap();
        let waiting = r.create("f", JobRequest::Reclassify).unwrap();
        r.update(&waiting.job_id, |j| j.state = JobState::AwaitingUserChoice).unwrap();
        let done = r.create("f", JobRequest::Reclassify).unwrap();
        r.update(&done.job_id, |j| j.state = JobState::Done).unwrap();
        drop(r);

        let r = registry(&store);
        for id in [&running.job_id, &queued.job_id] {
            let j = r.get(id).unwrap();
            assert_eq!(j.state, JobState::Failed);
            assert!(j.resumable);
            assert_eq!(j.error.as_deref(), Some(RESTART_MESSAGE));
        }
        assert_eq!(r.get(&waiting.job_id).unwrap().state, JobState::AwaitingUserChoice);
        let d = r.get(&done.job_id).unwrap();
        assert_eq!(d.state, JobState::Done);
        assert!(!d.resumable);
        assert_eq!(r.list(Some("f")).len(), 4);
    }
}
