//! Startup ingestion and the polling loops for configured sources.

use std::sync::Arc;

use tokio::task::JoinHandle;

use sieve_api::IngestReport;

use crate::error::{AppError, AppResult};
use crate::ingest::{FixtureAdapter, PollingAdapter, SourceConfig};
use crate::service::Service;

/// Reads a JSONL source once.
pub async fn ingest_file(service: &Service, source: &SourceConfig) -> AppResult<IngestReport> {
    let path = source.path().to_path_buf();
    let text = tokio::fs::read_to_string(&path)
        .await
        .map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    service.ingest_jsonl(&format!("jsonl:{}", path.display()), &text).await
}

/// One poll of `adapter`, logged.
pub async fn poll_once(service: &Service, adapter: &dyn PollingAdapter) -> AppResult<IngestReport> {
    let report = service.poll_source(adapter).await?;
    tracing::info!(
        source = adapter.source_id(),
        added = report.added,
        duplicates = report.duplicates,
        skipped = report.skipped.len(),
        "polled source"
    );
    Ok(report)
}

/// Ingests JSONL sources now and starts a loop per polled source. The first
/// poll runs immediately.
pub async fn start(service: Arc<Service>, sources: &[SourceConfig]) -> Vec<JoinHandle<()>> {
    let mut handles = Vec::new();
    for source in sources {
        match source {
            SourceConfig::Jsonl { .. } => match ingest_file(&service, source).await {
                Ok(r) => tracing::info!(path = %source.path().display(), added = r.added, skipped = r.skipped.len(), "ingested file"),
                Err(e) => tracing::error!(path = %source.path().display(), error = %e, "file ingest failed"),
            },
            SourceConfig::Fixture { id, path, .. } => {
                let adapter = FixtureAdapter::new(id.clone(), path.clone());
                let every = source.interval().expect("polled source");
                let service = service.clone();
                handles.push(tokio::spawn(async move {
                    let mut ticker = tokio::time::interval(every);
                    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
                    loop {
                        ticker.tick().await;
                        if let Err(e) = poll_once(&service, &adapter).await {
                            tracing::warn!(source = adapter.source_id(), error = %e, "poll failed");
                        }
                    }
                }));
            }
        }
    }
    handles
}
