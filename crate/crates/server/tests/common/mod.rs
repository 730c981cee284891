#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use sieve_api::{CreateFilterRequest, FilterView, Job, JobRequest, JobState, LabelInput};
use sieve_client::Client;
use sieve_core::gateway::sim::SimulationRule;
use sieve_core::harness::corpus::{make_synthetic_corpus, Corpus, CorpusSpec};
use sieve_core::jsonl::to_line;
use sieve_server::config::BackendConfig;
use sieve_server::{Running, ServiceConfig};

pub const WAIT: Duration = Duration::from_secs(60);

pub fn rule() -> SimulationRule {
    let BackendConfig::Simulation {
        positive,
        negative,
        noise,
        seed,
    } = BackendConfig::default()
    else {
        unreachable!()
    };
    SimulationRule::new(positive, negative, noise, seed).unwrap()
}

pub fn corpus(n: usize, seed: u64) -> Corpus {
    make_synthetic_corpus(
        &rule(),
        &CorpusSpec {
            n,
            ..CorpusSpec::default()
        },
        seed,
    )
    .unwrap()
}

pub fn jsonl(corpus: &Corpus) -> String {
    corpus.comments.iter().map(|c| to_line(c) + "\n").collect()
}

pub fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        port: 0,
        db: dir.join("sieve.db"),
        templates: BTreeMap::from([("thanks".to_string(), "Thanks for watching!".to_string())]),
        ..ServiceConfig::default()
    }
}

pub struct Harness {
    pub dir: tempfile::TempDir,
    pub server: Running,
    pub client: Client,
}

pub async fn start() -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let server = sieve_server::start(config(dir.path())).await.unwrap();
    let client = Client::new(server.base_url());
    Harness { dir, server, client }
}

pub async fn create(client: &Client, id: &str, description: &str) -> FilterView {
    client
        .create_filter(&CreateFilterRequest {
            filter_id: Some(id.into()),
            name: format!("{id} filter"),
            description: Some(description.into()),
            examples: vec![],
            auto_action: None,
        })
        .await
        .unwrap()
}

/// Labels `ids` with their ground truth.
pub async fn label(client: &Client, filter: &str, corpus: &Corpus, ids: &[String]) {
    let labels = ids
        .iter()
        .map(|id| LabelInput {
            comment_id: id.clone(),
            verdict: corpus.truth[id],
            source: None,
        })
        .collect();
    client.put_labels(filter, labels).await.unwrap();
}

pub async fn run_job(client: &Client, filter: &str, req: JobRequest) -> Job {
    let created = client.start_job(filter, &req).await.unwrap();
    let job = client.wait_job(&created.job_id, WAIT).await.unwrap();
    assert!(!matches!(job.state, JobState::Queued | JobState::Running), "job timed out: {job:?}");
    job
}

/// Waits for every job of `filter` to settle.
pub async fn settle(client: &Client, filter: &str) {
    for _ in 0..3000 {
        let jobs = client.jobs(filter).await.unwrap();
        if jobs.iter().all(|j| !matches!(j.state, JobState::Queued | JobState::Running)) {
            return;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    panic!("jobs of {filter} did not settle");
}
