use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};
use tret_core::providers::{
    embed_batched, ChatModel, ClusterText, Embedder, HttpChat, HttpClient, HttpEmbedder, HttpSettings, HttpSummarizer,
    ProviderError, Summarizer,
};

struct Request {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one scripted `(status, body)` response per connection, in order.
struct MockServer {
    base: String,
    requests: Arc<Mutex<Vec<Request>>>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    fn start(script: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        let handle = std::thread::spawn(move || {
            for (status, body) in script {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
                let (mut len, mut auth) = (0usize, None);
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (name, value) = h.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap(),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                log.lock().unwrap().push(Request {
                    path,
                    auth,
                    body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
                });
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
        });
        Self {
            base,
            requests,
            handle: Some(handle),
        }
    }

    fn settings(&self) -> HttpSettings {
        HttpSettings {
            api_base: Some(self.base.clone()),
            api_key: Some("test-key".into()),
            timeout: Duration::from_secs(10),
            max_attempts: 3,
            backoff: Duration::from_millis(5),
        }
    }

    fn finish(mut self) -> Vec<Request> {
        self.handle.take().unwrap().join().unwrap();
        std::mem::take(&mut *self.requests.lock().unwrap())
    }
}

fn embedding_response(rows: &[(usize, Vec<f64>)]) -> String {
    let data: Vec<Value> = rows
        .iter()
        .map(|(i, v)| json!({ "object": "embedding", "index": i, "embedding": v }))
        .collect();
    json!({ "object": "list", "data": data }).to_string()
}

#[test]
fn embed_request_shape_and_reordering() {
    // Out-of-order indices must be put back in input order.
    let server = MockServer::start(vec![(200, embedding_response(&[(1, vec![0.0, 2.0]), (0, vec![3.0, 4.0])]))]);
    let e = HttpEmbedder::new(HttpClient::new(server.settings()).unwrap(), "emb-small".into(), 2, 8);
    let m = e.embed(&["first", "second"]).unwrap();
    assert_eq!(m.row(0), &[0.6, 0.8]);
    assert_eq!(m.row(1), &[0.0, 1.0]);
    assert_eq!(e.id(), "http:model=emb-small:dim=2");
    let reqs = server.finish();
    assert_eq!(reqs[0].path, "/v1/embeddings");
    assert_eq!(reqs[0].auth.as_deref(), Some("Bearer test-key"));
    assert_eq!(reqs[0].body, json!({ "model": "emb-small", "input": ["first", "second"] }));
}

#[test]
fn count_mismatch_is_reported() {
    let server = MockServer::start(vec![(200, embedding_response(&[(0, vec![1.0, 0.0])]))]);
    let e = HttpEmbedder::new(HttpClient::new(server.settings()).unwrap(), "m".into(), 2, 8);
    let err = e.embed(&["a", "b"]).unwrap_err();
    assert!(matches!(err, ProviderError::CountMismatch { sent: 2, received: 1 }));
    assert!(err.to_string().starts_with("count mismatch"));
    server.finish();
}

#[test]
fn wrong_dimension_is_rejected() {
    let server = MockServer::start(vec![(200, embedding_response(&[(0, vec![1.0, 0.0, 0.0])]))]);
    let e = HttpEmbedder::new(HttpClient::new(server.settings()).unwrap(), "m".into(), 2, 8);
    assert!(matches!(e.embed(&["a"]), Err(ProviderError::Dimension { expected: 2, received: 3 })));
    server.finish();
}

#[test]
fn server_error_then_success_retries_once() {
    let server = MockServer::start(vec![
        (500, "{\"error\":\"busy\"}".into()),
        (200, embedding_response(&[(0, vec![1.0, 0.0])])),
    ]);
    let e = HttpEmbedder::new(HttpClient::new(server.settings()).unwrap(), "m".into(), 2, 8);
    let m = e.embed(&["x"]).unwrap();
    assert_eq!(m.row(0), &[1.0, 0.0]);
    assert_eq!(e.client().retries(), 1);
    assert_eq!(server.finish().len(), 2);
}

#[test]
fn rate_limit_exhausts_attempts() {
    let busy = || (429, "{}".to_string());
    let server = MockServer::start(vec![busy(), busy(), busy()]);
    let chat = HttpChat::new(HttpClient::new(server.settings()).unwrap(), "c".into());
    let err = chat.chat("hi").unwrap_err();
    assert!(matches!(err, ProviderError::Status { status: 429, .. }));
    assert_eq!(chat.client().retries(), 2);
    assert_eq!(server.finish().len(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(vec![(401, "{\"error\":\"bad key\"}".into())]);
    let chat = HttpChat::new(HttpClient::new(server.settings()).unwrap(), "c".into());
    assert!(matches!(chat.chat("hi"), Err(ProviderError::Status { status: 401, .. })));
    assert_eq!(chat.client().retries(), 0);
    server.finish();
}

#[test]
fn chat_and_summary_wire_format() {
    let reply = |text: &str| json!({ "choices": [{ "message": { "role": "assistant", "content": text } }] }).to_string();
    let server = MockServer::start(vec![(200, reply("forty-two")), (200, reply("  a short summary \n"))]);
    let chat = HttpChat::new(HttpClient::new(server.settings()).unwrap(), "chat-x".into());
    assert_eq!(chat.chat("question?").unwrap(), "forty-two");
    let s = HttpSummarizer::new(HttpClient::new(server.settings()).unwrap(), "chat-x".into());
    let cluster = ClusterText {
        nodes: vec![("a".into(), "apple".into())],
        edges: vec![],
    };
    assert_eq!(s.summarize(&cluster).unwrap(), "a short summary");
    let reqs = server.finish();
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(
        reqs[0].body,
        json!({ "model": "chat-x", "messages": [{ "role": "user", "content": "question?" }] })
    );
    assert_eq!(reqs[1].body["messages"][0]["content"], HttpSummarizer::prompt(&cluster));
}

#[test]
fn malformed_chat_response() {
    let server = MockServer::start(vec![(200, "{\"choices\":[]}".into())]);
    let chat = HttpChat::new(HttpClient::new(server.settings()).unwrap(), "c".into());
    assert!(matches!(chat.chat("hi"), Err(ProviderError::Malformed(_))));
    server.finish();
}

#[test]
fn batches_are_split_and_tagged() {
    let server = MockServer::start(vec![
        (200, embedding_response(&[(0, vec![1.0, 0.0]), (1, vec![0.0, 1.0])])),
        (400, "{}".into()),
    ]);
    let e = HttpEmbedder::new(HttpClient::new(server.settings()).unwrap(), "m".into(), 2, 2);
    let err = embed_batched(&e, &["a", "b", "c"]).unwrap_err();
    assert!(matches!(err, ProviderError::Batch { start: 2, end: 3, .. }), "{err}");
    let reqs = server.finish();
    assert_eq!(reqs[0].body["input"], json!(["a", "b"]));
    assert_eq!(reqs[1].body["input"], json!(["c"]));
}

#[test]
fn missing_auth_fails_before_any_request() {
    let s = HttpSettings {
        api_base: Some("http://127.0.0.1:9".into()),
        api_key: None,
        ..HttpSettings::default()
    };
    let err = HttpClient::new(s).unwrap_err();
    assert!(matches!(err, ProviderError::MissingConfig(_)));
    assert!(err.to_string().contains("missing auth"));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let s = HttpSettings {
        api_base: Some(format!("http://127.0.0.1:{port}")),
        api_key: Some("k".into()),
        max_attempts: 2,
        backoff: Duration::from_millis(1),
        ..HttpSettings::default()
    };
    let chat = HttpChat::new(HttpClient::new(s).unwrap(), "c".into());
    assert!(matches!(chat.chat("hi"), Err(ProviderError::Transport(_))));
    assert_eq!(chat.client().retries(), 1);
}
