//! Build configuration and the `key = value` config file format.
//!
//! ```text
//! # comments start with '#'
//! levels = 3
//! lambda = 1.0
//! bandwidth = auto
//! embedder = hash
//! ```
//!
//! Keys mirror the CLI flags with `-` replaced by `_`. A key may appear once.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

use crate::entropy::{EntropyParams, DEFAULT_SUBSAMPLE_CAP};
use crate::providers::{EmbedderSpec, HttpSettings, SummarizerSpec, SUMMARY_PROMPT_VERSION};
use crate::tree::SolverConfig;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("cannot read config {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Parses `key = value` lines. Values are trimmed; surrounding double quotes
/// are removed.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let key = k.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        let mut value = v.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::Duplicate {
                line: i + 1,
                key: key.to_string(),
            });
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummarizerKind {
    Extractive,
    Http,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildConfig {
    pub graph: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Precomputed graph-node embeddings (`TRET` file) used for tree
    /// construction instead of embedding node texts.
    pub node_embeddings: Option<PathBuf>,
    pub levels: usize,
    pub lambda: f64,
    pub bandwidth: Bandwidth,
    pub k: usize,
    pub embedder: EmbedderKind,
    pub embed_dim: usize,
    pub embed_seed: u64,
    pub embed_model: Option<String>,
    pub embed_batch: usize,
    pub summarizer: SummarizerKind,
    pub summary_budget: usize,
    pub chat_model: Option<String>,
    pub exact_threshold: usize,
    pub subsample_cap: usize,
    pub seed: u64,
    pub ann: bool,
    pub threads: Option<usize>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            graph: None,
            out: None,
            node_embeddings: None,
            levels: 3,
            lambda: 1.0,
            bandwidth: Bandwidth::Auto,
            k: 6,
            embedder: EmbedderKind::Hash,
            embed_dim: 64,
            embed_seed: 0,
            embed_model: None,
            embed_batch: 64,
            summarizer: SummarizerKind::Extractive,
            summary_budget: 64,
            chat_model: None,
            exact_threshold: 12,
            subsample_cap: DEFAULT_SUBSAMPLE_CAP,
            seed: 42,
            ann: false,
            threads: None,
            timeout_secs: 60,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Invalid {
        key: key.to_string(),
        msg: format!("`{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(ConfigError::Invalid {
            key: key.into(),
            msg: format!("`{value}` is not a boolean"),
        }),
    }
}

impl BuildConfig {
    /// Defaults, then `TRET_EMBED_MODEL` / `TRET_CHAT_MODEL`.
    pub fn from_env() -> Self {
        Self {
            embed_model: std::env::var("TRET_EMBED_MODEL").ok().filter(|s| !s.is_empty()),
            chat_model: std::env::var("TRET_CHAT_MODEL").ok().filter(|s| !s.is_empty()),
            ..Self::default()
        }
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        for (k, v) in parse_kv(&text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |msg: &str| ConfigError::Invalid {
            key: key.into(),
            msg: msg.into(),
        };
        match key {
            "graph" => self.graph = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "node_embeddings" => self.node_embeddings = Some(PathBuf::from(value)),
            "levels" => self.levels = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "bandwidth" => {
                self.bandwidth = if value == "auto" {
                    Bandwidth::Auto
                } else {
                    Bandwidth::Fixed(parse(key, value)?)
                }
            }
            "k" => self.k = parse(key, value)?,
            "embedder" => {
                self.embedder = match value {
                    "hash" => EmbedderKind::Hash,
                    "http" => EmbedderKind::Http,
                    _ => return Err(invalid("expected `hash` or `http`")),
                }
            }
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "embed_seed" => self.embed_seed = parse(key, value)?,
            "embed_model" => self.embed_model = Some(value.to_string()),
            "embed_batch" => self.embed_batch = parse(key, value)?,
            "summarizer" => {
                self.summarizer = match value {
                    "extractive" => SummarizerKind::Extractive,
                    "http" => SummarizerKind::Http,
                    _ => return Err(invalid("expected `extractive` or `http`")),
                }
            }
            "summary_budget" => self.summary_budget = parse(key, value)?,
            "chat_model" => self.chat_model = Some(value.to_string()),
            "exact_threshold" => self.exact_threshold = parse(key, value)?,
            "subsample_cap" => self.subsample_cap = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "ann" => self.ann = parse_bool(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "timeout_secs" => self.timeout_secs = parse(key, value)?,
            "max_attempts" => self.max_attempts = parse(key, value)?,
            "backoff_ms" => self.backoff_ms = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, msg: String| {
            Err(ConfigError::Invalid {
                key: key.into(),
                msg,
            })
        };
        if self.levels < 1 {
            return invalid("levels", "must be >= 1".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return invalid("lambda", format!("must be a finite number >= 0, got {}", self.lambda));
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) || !h.is_finite() {
                return invalid("bandwidth", format!("must be > 0 or `auto`, got {h}"));
            }
        }
        if self.k < 1 {
            return invalid("k", "must be >= 1".into());
        }
        if self.embed_dim < 1 {
            return invalid("embed_dim", "must be >= 1".into());
        }
        if self.embed_batch < 1 {
            return invalid("embed_batch", "must be >= 1".into());
        }
        if self.summary_budget < 8 {
            return invalid("summary_budget", format!("must be >= 8, got {}", self.summary_budget));
        }
        if self.exact_threshold < 2 || self.exact_threshold > 20 {
            return invalid("exact_threshold", format!("must be in 2..=20, got {}", self.exact_threshold));
        }
        if self.subsample_cap < 2 {
            return invalid("subsample_cap", "must be >= 2".into());
        }
        if self.threads == Some(0) {
            return invalid("threads", "must be >= 1".into());
        }
        if self.max_attempts < 1 {
            return invalid("max_attempts", "must be >= 1".into());
        }
        if self.embedder == EmbedderKind::Http && self.embed_model.is_none() {
            return invalid("embed_model", "required for the http embedder (or set TRET_EMBED_MODEL)".into());
        }
        if self.summarizer == SummarizerKind::Http && self.chat_model.is_none() {
            return invalid("chat_model", "required for the http summarizer (or set TRET_CHAT_MODEL)".into());
        }
        Ok(())
    }

    pub fn embedder_spec(&self) -> EmbedderSpec {
        match self.embedder {
            EmbedderKind::Hash => EmbedderSpec::Hash {
                dim: self.embed_dim,
                seed: self.embed_seed,
            },
            EmbedderKind::Http => EmbedderSpec::Http {
                model: self.embed_model.clone().unwrap_or_default(),
                dim: self.embed_dim,
                batch_size: self.embed_batch,
            },
        }
    }

    pub fn summarizer_spec(&self) -> SummarizerSpec {
        match self.summarizer {
            SummarizerKind::Extractive => SummarizerSpec::Extractive {
                budget: self.summary_budget,
            },
            SummarizerKind::Http => SummarizerSpec::Http {
                model: self.chat_model.clone().unwrap_or_default(),
                prompt_version: SUMMARY_PROMPT_VERSION.to_string(),
            },
        }
    }

    pub fn http_settings(&self) -> HttpSettings {
        HttpSettings {
            timeout: Duration::from_secs(self.timeout_secs),
            max_attempts: self.max_attempts,
            backoff: Duration::from_millis(self.backoff_ms),
            ..HttpSettings::from_env()
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            exact_threshold: self.exact_threshold,
            seed: self.seed,
        }
    }

    /// Entropy parameters for a resolved bandwidth over `dim`-dimensional
    /// node embeddings.
    pub fn entropy_params(&self, bandwidth: f64, dim: usize) -> EntropyParams {
        EntropyParams {
            lambda: self.lambda,
            bandwidth,
            dim,
            subsample_cap: Some(self.subsample_cap),
            sample_seed: self.seed,
        }
    }
}
