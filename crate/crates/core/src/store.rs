//! On-disk index directories.
//!
//! ```text
//! <dir>/manifest.json         build parameters, provider ids, counts, checksums
//! <dir>/graph.jsonl           the indexed graph
//! <dir>/tree.json             encoding tree
//! <dir>/summaries.jsonl       one summary per tree node
//! <dir>/embeddings.bin        summary embeddings, row i = tree node i
//! <dir>/node_embeddings.bin   graph node embeddings used for tree construction
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{decode_embeddings, encode_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::graph::{parse_graph_jsonl, TextualAttributedGraph};
use crate::index::{build_index, parse_summaries_jsonl, summaries_to_jsonl, AnnParams, Summary, TreeIndex};
use crate::providers::{EmbedderSpec, SummarizerSpec};
use crate::tree::EncodingTree;

pub const MANIFEST_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GRAPH_FILE: &str = "graph.jsonl";
pub const TREE_FILE: &str = "tree.json";
pub const SUMMARIES_FILE: &str = "summaries.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const NODE_EMBEDDINGS_FILE: &str = "node_embeddings.bin";

const DATA_FILES: [&str; 5] = [GRAPH_FILE, TREE_FILE, SUMMARIES_FILE, EMBEDDINGS_FILE, NODE_EMBEDDINGS_FILE];

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("bad magic")]
    BadMagic,
    #[error("truncated embedding file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("unsupported embedding format version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt embedding file: {0}")]
    Corrupt(String),
    #[error("dimension mismatch: manifest says {manifest}, {file} has {found}")]
    DimensionMismatch { file: String, manifest: usize, found: usize },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("manifest version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("missing index file {0}")]
    Missing(String),
    #[error("{file}: {msg}")]
    Malformed { file: String, msg: String },
    #[error("index inconsistency: {0}")]
    Inconsistent(String),
    #[error("embedder mismatch: index was built with {index}, query uses {query}")]
    EmbedderMismatch { index: String, query: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub levels: usize,
    pub lambda: f64,
    /// Bandwidth actually used.
    pub bandwidth: f64,
    pub bandwidth_auto: bool,
    pub seed: u64,
    pub exact_threshold: usize,
    pub subsample_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub tree_nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyTotals {
    pub structural: f64,
    pub semantic: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tool_version: String,
    /// Seconds since the Unix epoch; the only field that differs between
    /// otherwise identical builds.
    pub created_unix: u64,
    pub build: BuildParams,
    pub embedder: EmbedderSpec,
    pub embedder_id: String,
    pub summarizer: SummarizerSpec,
    pub summarizer_id: String,
    /// Dimension of the summary embeddings (and of query embeddings).
    pub dim: usize,
    /// Dimension of the graph-node embeddings.
    pub node_dim: usize,
    pub counts: Counts,
    pub ann: Option<AnnParams>,
    pub entropy: EntropyTotals,
    /// sha256 (hex) of every data file.
    #[serde(default)]
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Rejects querying with a different embedder than the one used to build.
    pub fn check_embedder(&self, spec: &EmbedderSpec) -> Result<(), StoreError> {
        if &self.embedder != spec {
            return Err(StoreError::EmbedderMismatch {
                index: self.embedder.id(),
                query: spec.id(),
            });
        }
        Ok(())
    }
}

/// Everything an index directory holds.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexBundle {
    pub manifest: Manifest,
    pub graph: TextualAttributedGraph,
    pub tree: EncodingTree,
    pub summaries: Vec<Summary>,
    pub index: TreeIndex,
    pub node_embeddings: EmbeddingMatrix,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read(dir: &Path, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    match std::fs::read(&path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::Missing(name.into()).into()),
        Err(e) => Err(Error::io(&path, e)),
    }
}

fn utf8(name: &str, bytes: Vec<u8>) -> Result<String> {
    String::from_utf8(bytes).map_err(|e| {
        StoreError::Malformed {
            file: name.into(),
            msg: e.to_string(),
        }
        .into()
    })
}

/// Writes all files into `dir` (created if needed). The manifest's `files`
/// map is filled in; other fields are written as given.
pub fn save_index(bundle: &IndexBundle, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let contents: [(&str, Vec<u8>); 5] = [
        (GRAPH_FILE, bundle.graph.to_jsonl().into_bytes()),
        (TREE_FILE, bundle.tree.to_json(&bundle.graph).into_bytes()),
        (SUMMARIES_FILE, summaries_to_jsonl(&bundle.summaries).into_bytes()),
        (EMBEDDINGS_FILE, encode_embeddings(bundle.index.embeddings())),
        (NODE_EMBEDDINGS_FILE, encode_embeddings(&bundle.node_embeddings)),
    ];
    let mut manifest = bundle.manifest.clone();
    manifest.files.clear();
    for (name, bytes) in &contents {
        write(dir, name, bytes)?;
        manifest.files.insert(name.to_string(), sha256_hex(bytes));
    }
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(dir, MANIFEST_FILE, text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = utf8(MANIFEST_FILE, read(dir, MANIFEST_FILE)?)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| StoreError::Malformed {
        file: MANIFEST_FILE.into(),
        msg: e.to_string(),
    })?;
    // Version first, so newer layouts fail with a clear message.
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != MANIFEST_VERSION {
        return Err(StoreError::VersionMismatch {
            found,
            expected: MANIFEST_VERSION,
        }
        .into());
    }
    serde_json::from_value(value).map_err(|e| {
        StoreError::Malformed {
            file: MANIFEST_FILE.into(),
            msg: e.to_string(),
        }
        .into()
    })
}

fn load_matrix(dir: &Path, name: &str, dim: usize) -> Result<(EmbeddingMatrix, Vec<u8>)> {
    let bytes = read(dir, name)?;
    let m = decode_embeddings(&bytes)?;
    if m.dim() != dim {
        return Err(StoreError::DimensionMismatch {
            file: name.into(),
            manifest: dim,
            found: m.dim(),
        }
        .into());
    }
    Ok((m, bytes))
}

/// Loads and cross-checks an index directory.
pub fn load_index(dir: &Path) -> Result<IndexBundle> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("index directory {} does not exist", dir.display())));
    }
    let manifest = read_manifest(dir)?;
    let inconsistent = |m: String| -> Error { StoreError::Inconsistent(m).into() };

    let (emb, emb_bytes) = load_matrix(dir, EMBEDDINGS_FILE, manifest.dim)?;
    let (node_emb, node_bytes) = load_matrix(dir, NODE_EMBEDDINGS_FILE, manifest.node_dim)?;

    let graph_bytes = read(dir, GRAPH_FILE)?;
    let tree_bytes = read(dir, TREE_FILE)?;
    let sum_bytes = read(dir, SUMMARIES_FILE)?;
    // Text files are verified before parsing so corruption reports as a checksum error.
    for (name, bytes) in [
        (GRAPH_FILE, &graph_bytes),
        (TREE_FILE, &tree_bytes),
        (SUMMARIES_FILE, &sum_bytes),
        (EMBEDDINGS_FILE, &emb_bytes),
        (NODE_EMBEDDINGS_FILE, &node_bytes),
    ] {
        match manifest.files.get(name) {
            Some(sum) if *sum == sha256_hex(bytes) => {}
            _ => return Err(StoreError::Checksum(name.into()).into()),
        }
    }
    let (graph, _) = parse_graph_jsonl(&utf8(GRAPH_FILE, graph_bytes)?)?;
    let tree = EncodingTree::from_json(&utf8(TREE_FILE, tree_bytes)?, &graph)?;
    let summaries = parse_summaries_jsonl(&utf8(SUMMARIES_FILE, sum_bytes)?).map_err(|msg| StoreError::Malformed {
        file: SUMMARIES_FILE.into(),
        msg,
    })?;
    debug_assert_eq!(manifest.files.len(), DATA_FILES.len());

    let c = manifest.counts;
    if c.graph_nodes != graph.node_count() || c.graph_edges != graph.edge_count() || c.tree_nodes != tree.len() {
        return Err(inconsistent("manifest counts do not match the files".into()));
    }
    if node_emb.len() != graph.node_count() {
        return Err(inconsistent(format!(
            "{} node embeddings for {} graph nodes",
            node_emb.len(),
            graph.node_count()
        )));
    }
    if summaries.len() != tree.len() {
        return Err(inconsistent(format!(
            "{} summaries for {} tree nodes",
            summaries.len(),
            tree.len()
        )));
    }
    if tree.target_height() != manifest.build.levels {
        return Err(inconsistent("tree height differs from manifest".into()));
    }
    let mut index = build_index(&tree, &summaries, emb).map_err(|e| inconsistent(e.to_string()))?;
    if let Some(p) = manifest.ann {
        index.restore_ann(p).map_err(|e| inconsistent(e.to_string()))?;
    }
    Ok(IndexBundle {
        manifest,
        graph,
        tree,
        summaries,
        index,
        node_embeddings: node_emb,
    })
}
