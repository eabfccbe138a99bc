//! Text embedding, summarization and chat providers.
//!
//! Offline providers ([`HashEmbedder`], [`ExtractiveSummarizer`]) are pure
//! and deterministic. HTTP providers speak the common JSON
//! embeddings / chat-completions wire shape.

mod extractive;
mod hash;
mod http;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingMatrix;

pub use extractive::{extractive_summarize, ExtractiveSummarizer};
pub use hash::{fnv1a64, hash_embed, HashEmbedder, SplitMix64};
pub use http::{HttpChat, HttpClient, HttpEmbedder, HttpSettings, HttpSummarizer, SUMMARY_PROMPT_VERSION};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("missing configuration: {0}")]
    MissingConfig(String),
    #[error("http status {status} from {url}: {body}")]
    Status { status: u16, url: String, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("count mismatch: sent {sent} inputs, received {received} vectors")]
    CountMismatch { sent: usize, received: usize },
    #[error("dimension mismatch: expected {expected}, received {received}")]
    Dimension { expected: usize, received: usize },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("batch {start}..{end}: {source}")]
    Batch {
        start: usize,
        end: usize,
        #[source]
        source: Box<ProviderError>,
    },
    #[error("summarizer failed on tree node {node}: {source}")]
    Summary {
        node: usize,
        #[source]
        source: Box<ProviderError>,
    },
    #[error("invalid provider spec: {0}")]
    InvalidSpec(String),
}

pub trait Embedder: Send + Sync {
    /// Stable identifier recorded in index manifests.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn batch_size(&self) -> usize {
        64
    }
    /// One unit-norm row per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix, ProviderError>;
}

/// A cluster handed to a summarizer: `(node id, text)` pairs and
/// `(src id, dst id, edge text)` triples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterText {
    pub nodes: Vec<(String, String)>,
    pub edges: Vec<(String, String, Option<String>)>,
}

pub trait Summarizer: Send + Sync {
    fn id(&self) -> String;
    fn summarize(&self, cluster: &ClusterText) -> Result<String, ProviderError>;
}

pub trait ChatModel: Send + Sync {
    fn id(&self) -> String;
    fn chat(&self, prompt: &str) -> Result<String, ProviderError>;
}

/// Embeds in `batch_size` chunks, keeping order and tagging failures with
/// the batch range.
pub fn embed_batched(embedder: &dyn Embedder, texts: &[&str]) -> Result<EmbeddingMatrix, ProviderError> {
    let mut out = EmbeddingMatrix::empty(embedder.dim());
    let size = embedder.batch_size().max(1);
    for (b, chunk) in texts.chunks(size).enumerate() {
        let start = b * size;
        let wrap = |e: ProviderError| ProviderError::Batch {
            start,
            end: start + chunk.len(),
            source: Box::new(e),
        };
        let rows = embedder.embed(chunk).map_err(wrap)?;
        if rows.len() != chunk.len() {
            return Err(wrap(ProviderError::CountMismatch {
                sent: chunk.len(),
                received: rows.len(),
            }));
        }
        if rows.dim() != embedder.dim() {
            return Err(wrap(ProviderError::Dimension {
                expected: embedder.dim(),
                received: rows.dim(),
            }));
        }
        out.append(rows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedderSpec {
    Hash {
        dim: usize,
        seed: u64,
    },
    Http {
        model: String,
        dim: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_batch() -> usize {
    64
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Hash { dim, .. } | EmbedderSpec::Http { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.dim() == 0 {
            return Err(ProviderError::InvalidSpec("embedding dim must be >= 1".into()));
        }
        if let EmbedderSpec::Http { batch_size: 0, .. } = self {
            return Err(ProviderError::InvalidSpec("batch size must be >= 1".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> String {
        match self {
            EmbedderSpec::Hash { dim, seed } => format!("hash-v1:dim={dim}:seed={seed}"),
            EmbedderSpec::Http { model, dim, .. } => format!("http:model={model}:dim={dim}"),
        }
    }

    pub fn instantiate(&self, http: &HttpSettings) -> Result<Box<dyn Embedder>, ProviderError> {
        self.validate()?;
        Ok(match self {
            EmbedderSpec::Hash { dim, seed } => Box::new(HashEmbedder::new(*dim, *seed)),
            EmbedderSpec::Http { model, dim, batch_size } => Box::new(HttpEmbedder::new(
                HttpClient::new(http.clone())?,
                model.clone(),
                *dim,
                *batch_size,
            )),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SummarizerSpec {
    Extractive { budget: usize },
    Http { model: String, prompt_version: String },
}

impl SummarizerSpec {
    pub fn validate(&self) -> Result<(), ProviderError> {
        match self {
            SummarizerSpec::Extractive { budget } if *budget < 8 => Err(ProviderError::InvalidSpec(format!(
                "summary budget must be >= 8 tokens, got {budget}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        match self {
            SummarizerSpec::Extractive { budget } => format!("extractive-v1:budget={budget}"),
            SummarizerSpec::Http { model, prompt_version } => format!("http:model={model}:prompt={prompt_version}"),
        }
    }

    pub fn instantiate(&self, http: &HttpSettings) -> Result<Box<dyn Summarizer>, ProviderError> {
        self.validate()?;
        Ok(match self {
            SummarizerSpec::Extractive { budget } => Box::new(ExtractiveSummarizer::new(*budget)),
            SummarizerSpec::Http { model, .. } => Box::new(HttpSummarizer::new(HttpClient::new(http.clone())?, model.clone())),
        })
    }
}

/// Whitespace token count; an approximation of model token counts.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}
