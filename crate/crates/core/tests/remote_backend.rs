use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use ragcheck_core::backends::remote::RemoteBackend;
use ragcheck_core::{
    check, CheckInput, Error, NliBackend, PipelineConfig, RelevanceBackend, Stage,
};
use serde_json::{json, Value};

/// Minimal HTTP/1.1 server: one request per connection.
fn serve<F>(handler: F) -> (String, Arc<AtomicUsize>)
where
    F: Fn(&str, Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("")
                .to_string();
            let mut length = 0;
            loop {
                let mut header = String::new();
                reader.read_line(&mut header).unwrap();
                if header.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = header.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let (status, out) =
                handler(&path, serde_json::from_slice(&body).unwrap_or(Value::Null));
            let response = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{out}",
                out.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}"), hits)
}

/// Scores each item by its length; echoes the query length as an offset.
fn length_scorer(path: &str, body: Value) -> (u16, String) {
    if path != "/score" {
        return (404, "{}".into());
    }
    let items = body["items"].as_array().cloned().unwrap_or_default();
    let scores: Vec<f64> = items
        .iter()
        .map(|i| i.as_str().unwrap().len() as f64 / 100.0)
        .collect();
    (200, json!({ "scores": scores }).to_string())
}

#[test]
fn relevance_over_http() {
    let (url, hits) = serve(length_scorer);
    let backend = RemoteBackend::new(&url, Duration::from_secs(5));
    let scores = backend.score_batch("q", &["ab", "abcd"]).unwrap();
    assert_eq!(scores, [0.02, 0.04]);
    assert_eq!(backend.score_pair("q", "abc").unwrap(), 0.03);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn batches_are_chunked() {
    let (url, hits) = serve(length_scorer);
    let backend = RemoteBackend::new(&url, Duration::from_secs(5)).with_batch_size(2);
    let items = ["a", "bb", "ccc", "dddd", "eeeee"];
    let scores = backend.score_batch("q", &items).unwrap();
    assert_eq!(scores, [0.01, 0.02, 0.03, 0.04, 0.05]);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn nli_over_http_sends_claim_as_query() {
    let (url, _) = serve(|_, body| {
        let claim = body["query"].as_str().unwrap().to_string();
        let scores: Vec<f64> = body["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| {
                if claim.contains("Paris") && s.as_str().unwrap().contains("Paris") {
                    0.9
                } else {
                    0.1
                }
            })
            .collect();
        (200, json!({ "scores": scores }).to_string())
    });
    let backend = RemoteBackend::new(&url, Duration::from_secs(5));
    let claim = "The answer to the question Where? is Paris.";
    assert_eq!(
        backend
            .entail_batch(&["Paris is nice.", "Rome."], claim)
            .unwrap(),
        [0.9, 0.1]
    );
    assert_eq!(backend.entail("Rome.", claim).unwrap(), 0.1);
}

#[test]
fn non_200_is_backend_failure() {
    let (url, _) = serve(|_, _| (503, r#"{"error":"overloaded"}"#.into()));
    let backend = RemoteBackend::new(&url, Duration::from_secs(5));
    let err = backend.score_pair("q", "x").unwrap_err();
    assert!(err.message.contains("503"), "{err}");

    let input = CheckInput::new("q", "a", &["x", "y"]).unwrap();
    let err = check(&backend, &backend, &input, &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Relevance));
    assert!(matches!(err.root(), Error::BackendFailure { .. }));
}

#[test]
fn wrong_score_count_is_backend_failure() {
    let (url, _) = serve(|_, _| (200, r#"{"scores":[1.0]}"#.into()));
    let backend = RemoteBackend::new(&url, Duration::from_secs(5));
    assert!(backend.score_batch("q", &["a", "b"]).is_err());
}

#[test]
fn malformed_body_is_backend_failure() {
    let (url, _) = serve(|_, _| (200, "not json".into()));
    let backend = RemoteBackend::new(&url, Duration::from_secs(5));
    assert!(backend.score_pair("q", "a").is_err());
}

#[test]
fn unreachable_endpoint_is_backend_failure() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let backend = RemoteBackend::new(&format!("http://{addr}/"), Duration::from_millis(500));
    assert_eq!(backend.url(), format!("http://{addr}/score"));
    assert!(backend.score_pair("q", "a").is_err());
}
