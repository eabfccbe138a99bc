//! Per-node summaries, summary embeddings and the searchable tree index.

mod ann;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingMatrix};
use crate::graph::TextualAttributedGraph;
use crate::providers::{embed_batched, whitespace_tokens, ClusterText, Embedder, ProviderError, Summarizer};
use crate::tree::{EncodingTree, TreeNodeId};

pub use ann::{AnnParams, IvfIndex};

/// Recall@10 an ANN layer must reach on its probe set.
pub const ANN_TARGET_RECALL: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("missing summary for tree node {0}")]
    MissingSummary(TreeNodeId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{rows} embedding rows for {nodes} tree nodes")]
    RowCount { rows: usize, nodes: usize },
    #[error("tree ids are not contiguous; compact the tree first")]
    NotCompact,
    #[error("index is empty")]
    Empty,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("ANN layer: {0}")]
    Ann(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummarySource {
    LeafPassthrough,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub id: TreeNodeId,
    pub text: String,
    pub source: SummarySource,
    pub token_count: usize,
}

impl Summary {
    pub fn new(id: TreeNodeId, text: String, source: SummarySource) -> Self {
        let token_count = whitespace_tokens(&text);
        Self {
            id,
            text,
            source,
            token_count,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryLine {
    id: TreeNodeId,
    text: String,
    source: SummarySource,
}

pub fn summaries_to_jsonl(summaries: &[Summary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let line = SummaryLine {
            id: s.id,
            text: s.text.clone(),
            source: s.source,
        };
        out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
        out.push('\n');
    }
    out
}

/// Parses `summaries.jsonl`; ids must run 0, 1, 2, ... in file order.
pub fn parse_summaries_jsonl(text: &str) -> Result<Vec<Summary>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: SummaryLine = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if l.id != out.len() {
            return Err(format!("line {}: expected id {}, found {}", i + 1, out.len(), l.id));
        }
        out.push(Summary::new(l.id, l.text, l.source));
    }
    Ok(out)
}

/// Node and internal-edge texts of tree node `alpha`'s cluster.
pub fn cluster_text(tree: &EncodingTree, alpha: TreeNodeId, g: &TextualAttributedGraph) -> ClusterText {
    let members = &tree.node(alpha).members;
    ClusterText {
        nodes: members
            .iter()
            .map(|&v| (g.node(v).id.clone(), g.node(v).text.clone()))
            .collect(),
        edges: g
            .internal_edges(members)
            .map(|e| (g.node(e.src).id.clone(), g.node(e.dst).id.clone(), e.text.clone()))
            .collect(),
    }
}

fn generate(
    tree: &EncodingTree,
    alpha: TreeNodeId,
    g: &TextualAttributedGraph,
    summarizer: &dyn Summarizer,
) -> Result<Summary, ProviderError> {
    let text = summarizer
        .summarize(&cluster_text(tree, alpha, g))
        .map_err(|e| ProviderError::Summary {
            node: alpha,
            source: Box::new(e),
        })?;
    Ok(Summary::new(alpha, text, SummarySource::Generated))
}

/// The node a summary is taken from: the first node below `alpha`, along
/// the pass-through chain, that is a singleton or has a real split.
fn summary_source_node(tree: &EncodingTree, mut alpha: TreeNodeId) -> TreeNodeId {
    while tree.node(alpha).len() > 1 && tree.is_pass_through(alpha) {
        alpha = tree.node(alpha).children[0];
    }
    alpha
}

/// Summary of one tree node. Singleton clusters carry their node's text
/// verbatim; pass-through nodes copy their child's summary.
pub fn summarize_node(
    tree: &EncodingTree,
    alpha: TreeNodeId,
    g: &TextualAttributedGraph,
    summarizer: &dyn Summarizer,
) -> Result<Summary, ProviderError> {
    let src = summary_source_node(tree, alpha);
    let n = tree.node(src);
    let mut s = if n.len() == 1 {
        Summary::new(src, g.node(n.members[0]).text.clone(), SummarySource::LeafPassthrough)
    } else {
        generate(tree, src, g, summarizer)?
    };
    s.id = alpha;
    Ok(s)
}

/// Summaries for every node of a compact tree, in id order. Each distinct
/// cluster is summarized once; calls run in parallel.
pub fn summarize_tree(
    tree: &EncodingTree,
    g: &TextualAttributedGraph,
    summarizer: &dyn Summarizer,
) -> Result<Vec<Summary>, ProviderError> {
    let n = tree.len();
    let sources: Vec<TreeNodeId> = (0..n).map(|id| summary_source_node(tree, id)).collect();
    let generated: Vec<TreeNodeId> = (0..n).filter(|&id| sources[id] == id && tree.node(id).len() > 1).collect();
    let texts = generated
        .par_iter()
        .map(|&id| generate(tree, id, g, summarizer))
        .collect::<Result<Vec<_>, _>>()?;
    let mut by_id: Vec<Option<Summary>> = vec![None; n];
    for s in texts {
        let id = s.id;
        by_id[id] = Some(s);
    }
    Ok((0..n)
        .map(|id| {
            let src = sources[id];
            match &by_id[src] {
                Some(s) => Summary {
                    id,
                    ..s.clone()
                },
                None => {
                    let v = tree.node(src).members[0];
                    Summary::new(id, g.node(v).text.clone(), SummarySource::LeafPassthrough)
                }
            }
        })
        .collect())
}

/// One unit-norm row per summary, in summary order. Identical texts are
/// embedded once.
pub fn embed_tree(summaries: &[Summary], embedder: &dyn Embedder) -> Result<EmbeddingMatrix, ProviderError> {
    let mut unique: Vec<&str> = Vec::new();
    let mut slot: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let rows: Vec<usize> = summaries
        .iter()
        .map(|s| {
            *slot.entry(s.text.as_str()).or_insert_with(|| {
                unique.push(s.text.as_str());
                unique.len() - 1
            })
        })
        .collect();
    let embedded = embed_batched(embedder, &unique)?;
    Ok(embedded.select(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: TreeNodeId,
    pub level: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: TreeNodeId,
    pub level: usize,
    pub sim: f64,
}

/// Every tree node with its summary embedding and depth. Search is an exact
/// cosine scan unless an ANN layer is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeIndex {
    entries: Vec<IndexEntry>,
    embeddings: EmbeddingMatrix,
    ann: Option<IvfIndex>,
}

impl TreeIndex {
    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn ann(&self) -> Option<&IvfIndex> {
        self.ann.as_ref()
    }

    pub fn ann_params(&self) -> Option<AnnParams> {
        self.ann.as_ref().map(IvfIndex::params)
    }

    /// Attaches an ANN layer tuned to [`ANN_TARGET_RECALL`].
    pub fn enable_ann(&mut self, seed: u64) -> Result<AnnParams, IndexError> {
        let ivf = IvfIndex::build(&self.embeddings, seed, ANN_TARGET_RECALL).map_err(IndexError::Ann)?;
        let p = ivf.params();
        self.ann = Some(ivf);
        Ok(p)
    }

    pub fn restore_ann(&mut self, params: AnnParams) -> Result<(), IndexError> {
        self.ann = Some(IvfIndex::rebuild(&self.embeddings, params).map_err(IndexError::Ann)?);
        Ok(())
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<(), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        if self.is_empty() {
            return Err(IndexError::Empty);
        }
        if query.len() != self.dim() {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        Ok(())
    }

    fn hits(&self, ranked: Vec<(usize, f64)>) -> Vec<Hit> {
        ranked
            .into_iter()
            .map(|(row, sim)| Hit {
                id: self.entries[row].id,
                level: self.entries[row].level,
                sim,
            })
            .collect()
    }

    /// Top-k by cosine similarity over all entries, ties by id.
    pub fn search_exact(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_query(query, k)?;
        Ok(self.hits(ann::exact_top_k(&self.embeddings, query, k)))
    }

    /// ANN search when a layer is attached, exact scan otherwise.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        self.check_query(query, k)?;
        match &self.ann {
            Some(ivf) => Ok(self.hits(ivf.search(&self.embeddings, query, k))),
            None => Ok(self.hits(ann::exact_top_k(&self.embeddings, query, k))),
        }
    }

    pub fn similarity(&self, row: usize, query: &[f32]) -> f64 {
        dot(self.embeddings.row(row), query)
    }
}

/// Pairs every node of a compact tree with its summary embedding.
pub fn build_index(
    tree: &EncodingTree,
    summaries: &[Summary],
    embeddings: EmbeddingMatrix,
) -> Result<TreeIndex, IndexError> {
    let n = tree.len();
    if tree.capacity() != n {
        return Err(IndexError::NotCompact);
    }
    for id in 0..n {
        if summaries.get(id).map(|s| s.id) != Some(id) {
            return Err(IndexError::MissingSummary(id));
        }
    }
    if embeddings.len() != n {
        return Err(IndexError::RowCount {
            rows: embeddings.len(),
            nodes: n,
        });
    }
    Ok(TreeIndex {
        entries: (0..n)
            .map(|id| IndexEntry {
                id,
                level: tree.node(id).depth,
            })
            .collect(),
        embeddings,
        ann: None,
    })
}
