use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use metaret::encoder::{CachedEncoder, EmbeddingCache, RemoteConfig, RemoteEncoder};
use metaret::{Encoder, EncoderError};
use serde_json::{json, Value};

const DIM: usize = 4;

#[derive(Debug, Clone)]
struct Captured {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

type Responder = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// A one-connection-per-request HTTP server answering from `respond`.
fn serve(respond: Box<Responder>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let log = Arc::new(Mutex::new(Vec::new()));
    let seen = Arc::clone(&log);
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k == "content-length")
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let n = {
                let mut log = seen.lock().unwrap();
                log.push(Captured {
                    request_line: request_line.trim_end().to_string(),
                    headers,
                    body: body.clone(),
                });
                log.len()
            };
            let (status, payload) = respond(n, &body);
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}/v1/embeddings"), log)
}

fn vector_for(text: &str) -> Vec<f64> {
    vec![text.len() as f64, f64::from(text.as_bytes()[0]), 1.0, 0.5]
}

/// A well-behaved embeddings response, listed in reverse index order.
fn embeddings_reply(body: &Value) -> String {
    let inputs = body["input"].as_array().unwrap();
    let mut data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": vector_for(t.as_str().unwrap())}))
        .collect();
    data.reverse();
    json!({ "data": data }).to_string()
}

fn config(endpoint: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint: endpoint.to_string(),
        model: "mock-embed".into(),
        dim: DIM,
        batch_size: 2,
        max_attempts: 5,
        initial_backoff: Duration::from_millis(1),
        timeout: Duration::from_secs(10),
    }
}

fn texts(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

#[test]
fn request_format_batching_and_order() {
    let (endpoint, log) = serve(Box::new(|_, body| (200, embeddings_reply(body))));
    let enc = RemoteEncoder::new(config(&endpoint), Some("sk-test".into())).unwrap();
    let input = texts(&["alpha", "beta", "gamma", "delta", "epsilon"]);
    let out = enc.encode_batch(&input, 1).unwrap();
    for (t, v) in input.iter().zip(&out) {
        assert_eq!(v.values(), vector_for(t).as_slice());
    }
    assert_eq!(enc.request_count(), 3);
    let log = log.lock().unwrap();
    assert_eq!(log.len(), 3);
    let first = &log[0];
    assert_eq!(first.request_line, "POST /v1/embeddings HTTP/1.1");
    assert!(first
        .headers
        .contains(&("authorization".into(), "Bearer sk-test".into())));
    assert_eq!(first.body, json!({"model": "mock-embed", "input": ["alpha", "beta"]}));
    assert_eq!(log[2].body["input"], json!(["epsilon"]));
}

#[test]
fn transient_failures_are_retried() {
    let (endpoint, log) = serve(Box::new(|n, body| match n {
        1 => (503, "busy".into()),
        2 => (429, "slow down".into()),
        _ => (200, embeddings_reply(body)),
    }));
    let enc = RemoteEncoder::new(config(&endpoint), None).unwrap();
    let v = enc.encode("hello").unwrap();
    assert_eq!(v.values(), vector_for("hello").as_slice());
    assert_eq!(enc.request_count(), 3);
    assert!(log.lock().unwrap()[0].headers.iter().all(|(k, _)| k != "authorization"));
}

#[test]
fn gives_up_after_max_attempts() {
    let (endpoint, _log) = serve(Box::new(|_, _| (500, "boom".into())));
    let enc = RemoteEncoder::new(config(&endpoint), None).unwrap();
    match enc.encode("hello") {
        Err(EncoderError::RemoteFailure { status, body }) => {
            assert_eq!(status, Some(500));
            assert_eq!(body, "boom");
        }
        other => panic!("expected a remote failure, got {other:?}"),
    }
    assert_eq!(enc.request_count(), 5);
}

#[test]
fn client_errors_are_not_retried() {
    let (endpoint, _log) = serve(Box::new(|_, _| (401, "bad key".into())));
    let enc = RemoteEncoder::new(config(&endpoint), None).unwrap();
    assert!(matches!(
        enc.encode("x"),
        Err(EncoderError::RemoteFailure { status: Some(401), .. })
    ));
    assert_eq!(enc.request_count(), 1);
}

#[test]
fn wrong_dimension_is_rejected() {
    let (endpoint, _log) = serve(Box::new(|_, _| {
        (200, json!({"data": [{"embedding": [1.0, 2.0]}]}).to_string())
    }));
    let enc = RemoteEncoder::new(config(&endpoint), None).unwrap();
    assert!(matches!(
        enc.encode("x"),
        Err(EncoderError::DimMismatch { expected: 4, got: 2 })
    ));
}

#[test]
fn unreachable_endpoint_fails_after_retries() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut c = config(&format!("http://127.0.0.1:{port}/v1/embeddings"));
    c.max_attempts = 2;
    let enc = RemoteEncoder::new(c, None).unwrap();
    assert!(matches!(
        enc.encode("x"),
        Err(EncoderError::RemoteFailure { status: None, .. })
    ));
    assert_eq!(enc.request_count(), 2);
}

#[test]
fn empty_input_never_reaches_the_server() {
    let (endpoint, log) = serve(Box::new(|_, body| (200, embeddings_reply(body))));
    let enc = RemoteEncoder::new(config(&endpoint), None).unwrap();
    assert!(matches!(
        enc.encode_batch(&texts(&["ok", "  "]), 1),
        Err(EncoderError::EmptyInput)
    ));
    assert!(log.lock().unwrap().is_empty());
}

#[test]
fn warm_cache_makes_no_remote_calls() {
    let (endpoint, _log) = serve(Box::new(|_, body| (200, embeddings_reply(body))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.cache");
    let input = texts(&["alpha", "beta", "alpha", "gamma"]);

    let cold = CachedEncoder::new(
        RemoteEncoder::new(config(&endpoint), None).unwrap(),
        EmbeddingCache::open(&path).unwrap(),
    );
    let first = cold.encode_batch(&input, 2).unwrap();
    assert_eq!(
        cold.inner().request_count(),
        2,
        "three distinct texts in batches of two"
    );
    drop(cold);

    let warm = CachedEncoder::new(
        RemoteEncoder::new(config(&endpoint), None).unwrap(),
        EmbeddingCache::open(&path).unwrap(),
    );
    assert_eq!(warm.encode_batch(&input, 2).unwrap(), first);
    assert_eq!(warm.encode("beta").unwrap(), first[1]);
    assert_eq!(warm.inner().request_count(), 0);
}
