//! Remote gateway contracts against a local stub server: wire format, retry
//! with backoff, the in-flight limit, and failure materialization.

use std::sync::atomic::{AtomicI64, AtomicU32, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use ttscale::gateway::{ChatBackend, HttpGateway, RetryPolicy};
use ttscale::models::{GenerationContext, ModelError, ModelRef, ModelRuntime, SamplingParams};

#[derive(Default)]
struct StubState {
    hits: AtomicU32,
    fail_first: u32,
    in_flight: AtomicI64,
    peak: AtomicI64,
    delay: Duration,
    last_body: std::sync::Mutex<Option<Value>>,
}

async fn completions(
    State(state): State<Arc<StubState>>,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    let hit = state.hits.fetch_add(1, Ordering::SeqCst) + 1;
    *state.last_body.lock().unwrap() = Some(body.clone());

    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak.fetch_max(now, Ordering::SeqCst);
    if !state.delay.is_zero() {
        tokio::time::sleep(state.delay).await;
    }
    state.in_flight.fetch_sub(1, Ordering::SeqCst);

    if hit <= state.fail_first {
        return (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": "transient"})));
    }
    let content = format!("echo:{}", body["messages"][0]["content"].as_str().unwrap_or(""));
    (
        StatusCode::OK,
        Json(json!({ "choices": [ { "message": { "role": "assistant", "content": content } } ] })),
    )
}

async fn spawn_stub(state: Arc<StubState>) -> String {
    let app = Router::new()
        .route("/v1/chat/completions", post(completions))
        .with_state(state);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    format!("http://{addr}/v1/chat/completions")
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { max_attempts: 3, base_backoff: Duration::from_millis(10) }
}

#[tokio::test]
async fn echoes_fixed_text_and_sends_sampling_knobs() {
    let state = Arc::new(StubState::default());
    let endpoint = spawn_stub(state.clone()).await;
    let gateway = HttpGateway::new(4, fast_retry());
    let model = ModelRef::remote("stub-model", endpoint, None).unwrap();
    let params = SamplingParams { temperature: 0.7, top_p: 0.9, seed: 123 };

    let reply = gateway.chat(&model, "hello there", &params).await.unwrap();
    assert_eq!(reply, "echo:hello there");

    let body = state.last_body.lock().unwrap().clone().unwrap();
    assert_eq!(body["model"], "stub-model");
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["temperature"].as_f64().unwrap(), 0.7);
    assert_eq!(body["top_p"].as_f64().unwrap(), 0.9);
    assert_eq!(body["seed"].as_u64().unwrap(), 123);
}

#[tokio::test]
async fn retries_transient_failures_until_attempt_cap() {
    let state = Arc::new(StubState { fail_first: 2, ..Default::default() });
    let endpoint = spawn_stub(state.clone()).await;
    let gateway = HttpGateway::new(4, fast_retry());
    let model = ModelRef::remote("stub", endpoint, None).unwrap();

    let reply = gateway
        .chat(&model, "retry me", &SamplingParams::default())
        .await
        .unwrap();
    assert_eq!(reply, "echo:retry me");
    assert_eq!(state.hits.load(Ordering::SeqCst), 3, "two failures plus the success");
}

#[tokio::test]
async fn exhausted_attempts_surface_last_status() {
    let state = Arc::new(StubState { fail_first: 99, ..Default::default() });
    let endpoint = spawn_stub(state.clone()).await;
    let gateway = HttpGateway::new(4, fast_retry());
    let model = ModelRef::remote("stub", endpoint, None).unwrap();

    let err = gateway
        .chat(&model, "always failing", &SamplingParams::default())
        .await
        .unwrap_err();
    match err {
        ModelError::Exhausted { attempts, last, .. } => {
            assert_eq!(attempts, 3);
            assert!(last.contains("500"), "last error carries the status: {last}");
        }
        other => panic!("expected Exhausted, got {other}"),
    }
    assert_eq!(state.hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn in_flight_limit_bounds_observed_concurrency() {
    let state = Arc::new(StubState { delay: Duration::from_millis(40), ..Default::default() });
    let endpoint = spawn_stub(state.clone()).await;
    let gateway = Arc::new(HttpGateway::new(2, fast_retry()));
    let model = ModelRef::remote("stub", endpoint, None).unwrap();

    let calls = (0..8).map(|i| {
        let gateway = gateway.clone();
        let model = model.clone();
        async move {
            gateway
                .chat(&model, &format!("call {i}"), &SamplingParams::default())
                .await
        }
    });
    let results = futures::future::join_all(calls).await;
    assert!(results.iter().all(Result::is_ok));
    assert_eq!(state.hits.load(Ordering::SeqCst), 8);
    let peak = state.peak.load(Ordering::SeqCst);
    assert!(peak <= 2, "observed peak concurrency {peak} exceeds the limit");
}

#[tokio::test]
async fn remote_generate_materializes_transport_failure_in_step() {
    // Unroutable endpoint: generation must return a step carrying the error,
    // never crash the rollout.
    let gateway = Arc::new(HttpGateway::new(2, RetryPolicy {
        max_attempts: 2,
        base_backoff: Duration::from_millis(5),
    }));
    let runtime = ModelRuntime::new(None, gateway);
    let model = ModelRef::remote("ghost", "http://127.0.0.1:9/unreachable", None).unwrap();
    let ctx = GenerationContext::new("q");

    let step = runtime
        .generate(&model, &ctx, &SamplingParams::default())
        .await
        .unwrap();
    assert!(step.error.is_some());
    assert_eq!(step.step_number, 1);
}

#[tokio::test]
async fn missing_credentials_fail_before_any_call() {
    let state = Arc::new(StubState::default());
    let endpoint = spawn_stub(state.clone()).await;
    let gateway = Arc::new(HttpGateway::new(2, fast_retry()));
    let runtime = ModelRuntime::new(None, gateway);
    let model =
        ModelRef::remote("secure", endpoint, Some("TTSCALE_TEST_MISSING_KEY".into())).unwrap();

    let err = runtime
        .generate(&model, &GenerationContext::new("q"), &SamplingParams::default())
        .await
        .unwrap_err();
    assert!(matches!(err, ModelError::MissingCredentials(_)));
    assert_eq!(state.hits.load(Ordering::SeqCst), 0, "no request was made");
}

#[tokio::test]
async fn non_retryable_status_fails_immediately() {
    async fn reject() -> (StatusCode, Json<Value>) {
        (StatusCode::UNAUTHORIZED, Json(json!({"error": "bad key"})))
    }
    let app = Router::new().route("/v1/chat/completions", post(reject));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let gateway = HttpGateway::new(2, fast_retry());
    let model = ModelRef::remote("stub", format!("http://{addr}/v1/chat/completions"), None).unwrap();
    let err = gateway
        .chat(&model, "x", &SamplingParams::default())
        .await
        .unwrap_err();
    assert!(matches!(err, ModelError::NonRetryable { .. }), "{err}");
}
