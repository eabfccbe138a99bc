use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatModel, ClusterText, Embedder, ProviderError, Summarizer};
use crate::embedding::{normalize_f64, EmbeddingMatrix};

/// Version tag of the summary prompt below; recorded in index manifests.
pub const SUMMARY_PROMPT_VERSION: &str = "s1";

const SUMMARY_PROMPT_HEAD: &str = "Summarize the following cluster of a knowledge graph. \
Keep every entity name and relationship that matters. Use at most 200 tokens.";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpSettings {
    pub api_base: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff: Duration,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            api_base: None,
            api_key: None,
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

impl HttpSettings {
    /// Defaults overlaid with `TRET_API_BASE` and `TRET_API_KEY`.
    pub fn from_env() -> Self {
        Self {
            api_base: std::env::var("TRET_API_BASE").ok().filter(|s| !s.is_empty()),
            api_key: std::env::var("TRET_API_KEY").ok().filter(|s| !s.is_empty()),
            ..Self::default()
        }
    }
}

/// Blocking JSON client with bounded retries on 5xx, 429 and transport
/// failures. Backoff doubles after every failed attempt.
#[derive(Debug)]
pub struct HttpClient {
    settings: HttpSettings,
    base: String,
    key: String,
    inner: reqwest::blocking::Client,
    retries: AtomicUsize,
}

impl HttpClient {
    pub fn new(settings: HttpSettings) -> Result<Self, ProviderError> {
        let base = settings
            .api_base
            .clone()
            .ok_or_else(|| ProviderError::MissingConfig("TRET_API_BASE is not set".into()))?;
        let key = settings
            .api_key
            .clone()
            .ok_or_else(|| ProviderError::MissingConfig("missing auth: TRET_API_KEY is not set".into()))?;
        if settings.max_attempts == 0 {
            return Err(ProviderError::InvalidSpec("max_attempts must be >= 1".into()));
        }
        let inner = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            key,
            settings,
            inner,
            retries: AtomicUsize::new(0),
        })
    }

    /// Retries performed so far, over all requests.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.base, path.trim_start_matches('/'));
        let mut delay = self.settings.backoff;
        let mut attempt = 1;
        loop {
            let err = match self.inner.post(&url).bearer_auth(&self.key).json(body).send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| ProviderError::Malformed(format!("response body is not JSON: {e}")));
                    }
                    let transient = status.is_server_error() || status.as_u16() == 429;
                    let body = resp.text().unwrap_or_default();
                    let e = ProviderError::Status {
                        status: status.as_u16(),
                        url: url.clone(),
                        body: body.chars().take(200).collect(),
                    };
                    if !transient {
                        return Err(e);
                    }
                    e
                }
                Err(e) => ProviderError::Transport(e.to_string()),
            };
            if attempt >= self.settings.max_attempts {
                return Err(err);
            }
            log::warn!("attempt {attempt} on {url} failed: {err}; retrying in {delay:?}");
            std::thread::sleep(delay);
            delay *= 2;
            attempt += 1;
            self.retries.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[derive(Debug)]
pub struct HttpEmbedder {
    client: HttpClient,
    model: String,
    dim: usize,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(client: HttpClient, model: String, dim: usize, batch_size: usize) -> Self {
        Self {
            client,
            model,
            dim,
            batch_size,
        }
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> String {
        format!("http:model={}:dim={}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix, ProviderError> {
        let resp = self
            .client
            .post_json("embeddings", &json!({ "model": self.model, "input": texts }))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Malformed("missing \"data\" array".into()))?;
        if data.len() != texts.len() {
            return Err(ProviderError::CountMismatch {
                sent: texts.len(),
                received: data.len(),
            });
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = match item.get("index") {
                Some(v) => v
                    .as_u64()
                    .ok_or_else(|| ProviderError::Malformed("non-integer \"index\"".into()))? as usize,
                None => pos,
            };
            let vector: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| ProviderError::Malformed("missing \"embedding\" array".into()))?
                .iter()
                .map(|x| x.as_f64().filter(|v| v.is_finite()))
                .collect::<Option<_>>()
                .ok_or_else(|| ProviderError::Malformed("non-numeric embedding value".into()))?;
            if vector.len() != self.dim {
                return Err(ProviderError::Dimension {
                    expected: self.dim,
                    received: vector.len(),
                });
            }
            rows.push((index, vector));
        }
        rows.sort_by_key(|(i, _)| *i);
        if rows.iter().enumerate().any(|(i, (idx, _))| i != *idx) {
            return Err(ProviderError::Malformed("embedding indices are not a permutation of the inputs".into()));
        }
        let mut out = EmbeddingMatrix::empty(self.dim);
        for (_, v) in rows {
            out.push_row(&normalize_f64(&v));
        }
        Ok(out)
    }
}

#[derive(Debug)]
pub struct HttpChat {
    client: HttpClient,
    model: String,
}

impl HttpChat {
    pub fn new(client: HttpClient, model: String) -> Self {
        Self { client, model }
    }

    /// Uses `TRET_CHAT_MODEL` for the model name.
    pub fn from_env(settings: HttpSettings) -> Result<Self, ProviderError> {
        let model = std::env::var("TRET_CHAT_MODEL")
            .map_err(|_| ProviderError::MissingConfig("TRET_CHAT_MODEL is not set".into()))?;
        Ok(Self::new(HttpClient::new(settings)?, model))
    }

    pub fn client(&self) -> &HttpClient {
        &self.client
    }
}

fn chat_call(client: &HttpClient, model: &str, prompt: &str) -> Result<String, ProviderError> {
    let resp = client.post_json(
        "chat/completions",
        &json!({ "model": model, "messages": [{ "role": "user", "content": prompt }] }),
    )?;
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("missing choices[0].message.content".into()))
}

impl ChatModel for HttpChat {
    fn id(&self) -> String {
        format!("http:model={}", self.model)
    }

    fn chat(&self, prompt: &str) -> Result<String, ProviderError> {
        chat_call(&self.client, &self.model, prompt)
    }
}

#[derive(Debug)]
pub struct HttpSummarizer {
    client: HttpClient,
    model: String,
}

impl HttpSummarizer {
    pub fn new(client: HttpClient, model: String) -> Self {
        Self { client, model }
    }

    pub fn prompt(cluster: &ClusterText) -> String {
        let mut nodes = cluster.nodes.clone();
        nodes.sort();
        let mut edges = cluster.edges.clone();
        edges.sort();
        let mut out = format!("{SUMMARY_PROMPT_HEAD}\n\nNodes:\n");
        for (id, text) in &nodes {
            out.push_str(&format!("- {id}: {text}\n"));
        }
        out.push_str("\nRelationships:\n");
        for (s, d, t) in &edges {
            out.push_str(&format!("- {s} -- {d}: {}\n", t.as_deref().unwrap_or("-")));
        }
        out.push_str("\nSummary:");
        out
    }
}

impl Summarizer for HttpSummarizer {
    fn id(&self) -> String {
        format!("http:model={}:prompt={SUMMARY_PROMPT_VERSION}", self.model)
    }

    fn summarize(&self, cluster: &ClusterText) -> Result<String, ProviderError> {
        let text = chat_call(&self.client, &self.model, &Self::prompt(cluster))?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ProviderError::Malformed("empty summary".into()));
        }
        Ok(text.to_string())
    }
}
