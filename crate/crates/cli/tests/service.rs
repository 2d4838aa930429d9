use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use ragcheck::backend::{BackendSpec, Scorer};
use ragcheck::service::{router, AppState};
use ragcheck_core::backends::stub::TokenOverlap;
use ragcheck_core::{
    check, BackendError, CheckInput, NliBackend, PipelineConfig, RelevanceBackend,
};
use serde_json::{json, Value};
use tower::ServiceExt;

fn state(relevance: Arc<dyn Scorer>, nli: Arc<dyn Scorer>) -> AppState {
    AppState::new(
        relevance,
        nli,
        PipelineConfig::default(),
        4,
        Duration::from_secs(5),
    )
}

fn fixture_state() -> AppState {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let table = |name: &str| {
        BackendSpec::Stub {
            table: Some(dir.join(name)),
        }
        .build()
        .unwrap()
    };
    state(table("relevance.json"), table("nli.json"))
}

async fn call(
    state: &AppState,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let response = router(state.clone()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

fn strip_timing(mut report: Value) -> Value {
    report.as_object_mut().unwrap().remove("timing");
    report
}

#[tokio::test]
async fn check_returns_the_library_report() {
    let state = state(Arc::new(TokenOverlap), Arc::new(TokenOverlap));
    let body = json!({"query": "q", "answer": "a", "sources": ["s1", "s2"]});
    let (status, report) = call(&state, "POST", "/v1/check", Some(body)).await;
    assert_eq!(status, StatusCode::OK);

    let input = CheckInput::new("q", "a", &["s1", "s2"]).unwrap();
    let direct = check(
        &TokenOverlap,
        &TokenOverlap,
        &input,
        &PipelineConfig::default(),
    )
    .unwrap();
    assert_eq!(
        strip_timing(report),
        strip_timing(serde_json::to_value(direct).unwrap())
    );
}

#[tokio::test]
async fn config_overrides_apply_per_request() {
    let state = fixture_state();
    let body = json!({
        "query": "Who wrote Hamlet?",
        "answer": "William Shakespeare",
        "sources": [
            "Hamlet is a tragedy written by William Shakespeare around 1600.",
            "The play is set in Denmark.",
            "Elsinore castle stands on the Danish coast."
        ],
        "config": {"selection_strategy": "topk", "top_k": 2, "aggregation": "min", "threshold": 0.5}
    });
    let (status, report) = call(&state, "POST", "/v1/check", Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["parameter"]["top_k"], 2);
    assert_eq!(report["aggregate"], 0.22);
    assert_eq!(report["verdict"], false);

    // Defaults are untouched by earlier overrides.
    let (_, config) = call(&state, "GET", "/v1/config", None).await;
    assert_eq!(
        config,
        serde_json::to_value(PipelineConfig::default()).unwrap()
    );
}

#[tokio::test]
async fn validation_errors_name_the_field() {
    let state = state(Arc::new(TokenOverlap), Arc::new(TokenOverlap));
    let cases = [
        (json!({"query": "q", "sources": ["s"]}), "answer"),
        (json!({"answer": "a", "sources": ["s"]}), "query"),
        (json!({"query": "q", "answer": "a"}), "sources"),
        (
            json!({"query": "q", "answer": 3, "sources": ["s"]}),
            "answer",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": ["s", 1]}),
            "sources",
        ),
        (
            json!({"query": "  ", "answer": "a", "sources": ["s"]}),
            "query",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": []}),
            "sources",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": ["s", " "]}),
            "sources[1]",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": ["s"], "config": {"colour": 1}}),
            "config",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": ["s"], "config": {"top_p": 2.0}}),
            "config.top_p",
        ),
        (
            json!({"query": "q", "answer": "a", "sources": ["s"], "config": {"claim_template": "no slots"}}),
            "config.claim_template",
        ),
    ];
    for (body, field) in cases {
        let (status, error) = call(&state, "POST", "/v1/check", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(error["field"], field, "{body}");
        assert!(error["error"].is_string());
    }

    let request = Request::builder()
        .method("POST")
        .uri("/v1/check")
        .body(Body::from("{not json"))
        .unwrap();
    let response = router(state).oneshot(request).await.unwrap();
    assert_eq!(response.status(), StatusCode::BAD_REQUEST);
}

struct Failing;

impl RelevanceBackend for Failing {
    fn score_pair(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Err(BackendError::new("connection refused"))
    }
}

impl NliBackend for Failing {
    fn entail(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Err(BackendError::new("connection refused"))
    }
}

/// Returns a score outside the relevance backend's contract.
struct NotANumber;

impl RelevanceBackend for NotANumber {
    fn score_pair(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Ok(f64::NAN)
    }
}

impl NliBackend for NotANumber {
    fn entail(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Ok(f64::NAN)
    }
}

#[tokio::test]
async fn backend_failures_are_502() {
    let body = json!({"query": "q", "answer": "a", "sources": ["s"]});
    let (status, error) = call(
        &state(Arc::new(Failing), Arc::new(TokenOverlap)),
        "POST",
        "/v1/check",
        Some(body.clone()),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert!(error["error"]
        .as_str()
        .unwrap()
        .contains("connection refused"));

    let (status, _) = call(
        &state(Arc::new(NotANumber), Arc::new(TokenOverlap)),
        "POST",
        "/v1/check",
        Some(body),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
}

#[test]
fn error_status_mapping() {
    use axum::response::IntoResponse;
    use ragcheck::service::ApiError;
    use ragcheck_core::{Error, Stage};

    let status = |e: Error| ApiError::from(e).into_response().status();
    // Not reachable through a well-behaved pipeline, so mapped directly.
    assert_eq!(
        status(Error::WeightSumMismatch { sum: 0.5 }),
        StatusCode::UNPROCESSABLE_ENTITY
    );
    assert_eq!(
        status(Error::Stage {
            stage: Stage::Nli,
            source: Box::new(Error::OutOfRangeScore {
                item: 0,
                score: 1.5
            }),
        }),
        StatusCode::BAD_GATEWAY
    );
    assert_eq!(
        status(Error::EmptyField("answer".into())),
        StatusCode::BAD_REQUEST
    );
}

#[tokio::test]
async fn health_and_config() {
    let state = fixture_state();
    let (status, body) = call(&state, "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
    let (status, body) = call(&state, "GET", "/v1/config", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["top_p"], 0.9);
    assert_eq!(body["selection_strategy"], "topp");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_match() {
    let state = fixture_state();
    let body = json!({
        "query": "What is the capital of Australia?",
        "answer": "Canberra",
        "sources": [
            "Canberra is the capital city of Australia.",
            "Sydney is the largest Australian city.",
            "Parliament House opened in 1988."
        ]
    });
    let tasks: Vec<_> = (0..16)
        .map(|_| {
            let (state, body) = (state.clone(), body.clone());
            tokio::spawn(async move { call(&state, "POST", "/v1/check", Some(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for task in tasks {
        let (status, report) = task.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        bodies.push(strip_timing(report));
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

struct Slow(Duration);

impl RelevanceBackend for Slow {
    fn score_pair(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        std::thread::sleep(self.0);
        Ok(0.0)
    }
}

impl NliBackend for Slow {
    fn entail(&self, _: &str, _: &str) -> Result<f64, BackendError> {
        Ok(0.5)
    }
}

#[tokio::test]
async fn slow_requests_time_out() {
    let state = AppState::new(
        Arc::new(Slow(Duration::from_millis(500))),
        Arc::new(TokenOverlap),
        PipelineConfig::default(),
        1,
        Duration::from_millis(50),
    );
    let body = json!({"query": "q", "answer": "a", "sources": ["s"]});
    let (status, _) = call(&state, "POST", "/v1/check", Some(body)).await;
    assert_eq!(status, StatusCode::GATEWAY_TIMEOUT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shutdown_drains_in_flight_requests() {
    use std::io::{Read, Write};

    let state = AppState::new(
        Arc::new(Slow(Duration::from_millis(300))),
        Arc::new(TokenOverlap),
        PipelineConfig::default(),
        4,
        Duration::from_secs(5),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(ragcheck::service::run(listener, state, async {
        let _ = stopped.await;
    }));

    let body = json!({"query": "q", "answer": "a", "sources": ["s"]}).to_string();
    let client = tokio::task::spawn_blocking(move || {
        let mut stream = std::net::TcpStream::connect(addr).unwrap();
        write!(
            stream,
            "POST /v1/check HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        )
        .unwrap();
        let mut response = String::new();
        stream.read_to_string(&mut response).unwrap();
        response
    });
    tokio::time::sleep(Duration::from_millis(100)).await;
    stop.send(()).unwrap();

    let response = client.await.unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    server.await.unwrap().unwrap();
}
