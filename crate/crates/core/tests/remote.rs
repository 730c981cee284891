//! The HTTP backend against a local mock provider that answers with the
//! simulation rule, so remote and simulated runs can be compared.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use chrono::{TimeZone, Utc};
use serde_json::{json, Value};

use sieve_core::cache::MemoryCache;
use sieve_core::gateway::remote::{RemoteBackend, RemoteConfig};
use sieve_core::gateway::sim::{sim_respond, SimBackend, SimulationRule};
use sieve_core::gateway::{CompletionRequest, Gateway, GatewayError, GatewaySettings};
use sieve_core::{Classifier, Comment, FilterPrompt};

struct Mock {
    rule: SimulationRule,
    hits: AtomicUsize,
    /// Requests to fail with 503 before answering.
    fail_first: usize,
    status: StatusCode,
}

async fn chat(State(m): State<Arc<Mock>>, headers: HeaderMap, Json(body): Json<Value>) -> Result<Json<Value>, StatusCode> {
    let n = m.hits.fetch_add(1, Ordering::SeqCst);
    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer k") {
        return Err(StatusCode::UNAUTHORIZED);
    }
    if n < m.fail_first {
        return Err(m.status);
    }
    let req = CompletionRequest {
        rendered_text: body["messages"][1]["content"].as_str().unwrap_or_default().to_string(),
        temperature: body["temperature"].as_f64().unwrap_or(0.0),
        seed: body["seed"].as_u64().unwrap_or(0),
        max_output_tokens: body["max_tokens"].as_u64().unwrap_or(0) as u32,
    };
    let text = sim_respond(&req, &m.rule).map_err(|_| StatusCode::BAD_REQUEST)?;
    Ok(Json(json!({"choices": [{"message": {"role": "assistant", "content": text}}]})))
}

async fn embeddings(State(m): State<Arc<Mock>>, Json(body): Json<Value>) -> Json<Value> {
    m.hits.fetch_add(1, Ordering::SeqCst);
    let sim = SimBackend::new(m.rule.clone());
    let inputs: Vec<String> = serde_json::from_value(body["input"].clone()).unwrap();
    // Out of order on purpose; the client sorts by index.
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": sim.embed_text(t).values}))
        .collect();
    Json(json!({ "data": data }))
}

async fn mock(fail_first: usize, status: StatusCode) -> (String, Arc<Mock>) {
    let m = Arc::new(Mock {
        rule: rule(),
        hits: AtomicUsize::new(0),
        fail_first,
        status,
    });
    let app = Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/v1/embeddings", post(embeddings))
        .with_state(m.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (format!("http://{addr}/v1"), m)
}

fn rule() -> SimulationRule {
    SimulationRule::new(["casino", "crypto"], ["charity"], 0.1, 5).unwrap()
}

fn remote(base: &str, retries: u32) -> Gateway {
    let mut cfg = RemoteConfig::new(base);
    cfg.api_key = Some("k".into());
    cfg.max_retries = retries;
    cfg.backoff_ms = 1;
    cfg.timeout_secs = 5;
    Gateway::new(Arc::new(RemoteBackend::new(cfg).unwrap()), GatewaySettings::default())
}

fn comments() -> Vec<Comment> {
    let t = Utc.with_ymd_and_hms(2024, 2, 1, 0, 0, 0).unwrap();
    [
        "best casino deal today",
        "lovely video",
        "the charity talk about crypto was useful",
        "crypto link in my profile",
        "thanks for the recipe",
        "casino night with friends",
        "great editing",
    ]
    .iter()
    .enumerate()
    .map(|(i, s)| Comment::new(format!("c{i}"), *s, t))
    .collect()
}

#[tokio::test]
async fn remote_classification_matches_the_simulation() {
    let (base, m) = mock(0, StatusCode::OK).await;
    let prompt = FilterPrompt::draft("f", "spam", "Catch comments about a casino or crypto");
    let over_http = Classifier::new(Arc::new(remote(&base, 0)), Arc::new(MemoryCache::new()));
    let local = Classifier::new(Arc::new(Gateway::simulated(rule())), Arc::new(MemoryCache::new()));
    let a = over_http.classify(&prompt, &comments(), 3).await.unwrap();
    let b = local.classify(&prompt, &comments(), 3).await.unwrap();
    assert_eq!(a, b);
    // 7 comments: 2 batches x 5 runs.
    assert_eq!(m.hits.load(Ordering::SeqCst), 10);
    assert_eq!(over_http.gateway().backend_name(), "remote");
}

#[tokio::test]
async fn embeddings_come_back_in_input_order() {
    let (base, _) = mock(0, StatusCode::OK).await;
    let g = remote(&base, 0);
    let texts: Vec<String> = comments().into_iter().map(|c| c.text).collect();
    let got = g.embed(&texts).await.unwrap();
    let sim = SimBackend::new(rule());
    let want: Vec<_> = texts.iter().map(|t| sim.embed_text(t)).collect();
    assert_eq!(got, want);
    assert_eq!(g.counts().embedded_texts, 7);
}

#[tokio::test]
async fn transient_failures_are_retried() {
    let (base, m) = mock(2, StatusCode::SERVICE_UNAVAILABLE).await;
    let prompt = FilterPrompt::draft("f", "spam", "Catch casino spam");
    let c = Classifier::new(Arc::new(remote(&base, 3)), Arc::new(MemoryCache::new()));
    let preds = c.classify(&prompt, &comments()[..1], 0).await.unwrap();
    assert_eq!(preds.len(), 1);
    // Five runs plus the two failed attempts.
    assert_eq!(m.hits.load(Ordering::SeqCst), 7);

    let (base, m) = mock(10, StatusCode::TOO_MANY_REQUESTS).await;
    let g = remote(&base, 2);
    let req = CompletionRequest {
        rendered_text: "x".into(),
        temperature: 0.0,
        seed: 0,
        max_output_tokens: 16,
    };
    let err = g.complete(sieve_core::render::TaskKind::Draft, &req).await.unwrap_err();
    assert!(matches!(&err, GatewayError::Transport(m) if m.contains("gave up after 3 attempts")), "{err}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let (base, m) = mock(0, StatusCode::OK).await;
    let mut cfg = RemoteConfig::new(&base);
    cfg.api_key = Some("wrong".into());
    cfg.backoff_ms = 1;
    let g = Gateway::new(Arc::new(RemoteBackend::new(cfg).unwrap()), GatewaySettings::default());
    let req = CompletionRequest {
        rendered_text: "x".into(),
        temperature: 0.0,
        seed: 0,
        max_output_tokens: 16,
    };
    let err = g.complete(sieve_core::render::TaskKind::Draft, &req).await.unwrap_err();
    assert!(err.to_string().contains("401"), "{err}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[tokio::test]
async fn unreachable_provider_fails_cleanly() {
    let g = remote("http://127.0.0.1:9", 1);
    let err = g.embed(&["x".to_string()]).await.unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)));
}
