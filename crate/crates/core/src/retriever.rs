//! Query-time retrieval: top-k tree nodes, union of their subgraphs,
//! textualization and prompt assembly.

use serde::Serialize;

use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::graph::{GraphBuilder, GraphError, NodeIx, TextualAttributedGraph};
use crate::index::{Hit, IndexError, TreeIndex};
use crate::providers::{whitespace_tokens, ChatModel, Embedder, ProviderError};
use crate::tree::EncodingTree;

pub const DEFAULT_K: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TokenCounts {
    pub context: usize,
    pub full_graph: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
    pub subgraph: TextualAttributedGraph,
    pub textualization: String,
    pub tokens: TokenCounts,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub text: String,
    pub prompt: String,
    /// `None` in offline mode.
    pub provider: Option<String>,
}

/// Top-k tree nodes by cosine similarity, ties by ascending id.
pub fn top_k_nodes(index: &TreeIndex, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
    index.search(query, k)
}

/// Union of the subgraphs induced by each hit's cluster. An edge is kept
/// only if some single hit contains both endpoints.
pub fn extract_union_subgraph(
    tree: &EncodingTree,
    g: &TextualAttributedGraph,
    hits: &[Hit],
) -> Result<TextualAttributedGraph, GraphError> {
    if hits.is_empty() {
        return Err(GraphError::EmptyExtraction);
    }
    let sets: Vec<&[NodeIx]> = hits.iter().map(|h| tree.node(h.id).members.as_slice()).collect();
    let mut in_union = vec![false; g.node_count()];
    for s in &sets {
        for &v in *s {
            in_union[v] = true;
        }
    }
    let mut b = GraphBuilder::new();
    let mut local = vec![usize::MAX; g.node_count()];
    for v in (0..g.node_count()).filter(|&v| in_union[v]) {
        let n = g.node(v);
        local[v] = b.add_node(&n.id, &n.text)?;
    }
    for e in g.edges() {
        if !(in_union[e.src] && in_union[e.dst]) {
            continue;
        }
        let internal = sets
            .iter()
            .any(|s| s.binary_search(&e.src).is_ok() && s.binary_search(&e.dst).is_ok());
        if internal {
            b.add_edge_ix(local[e.src], local[e.dst], e.text.clone())?;
        }
    }
    Ok(b.finish().0)
}

/// One `node <id>: <text>` line per node in id order, then one
/// `edge <src> -- <dst>: <text>` line per edge in (src, dst) order, with
/// `src < dst` and `-` for edges without text.
pub fn textualize(g: &TextualAttributedGraph) -> String {
    let mut nodes: Vec<(&str, &str)> = g.nodes().iter().map(|n| (n.id.as_str(), n.text.as_str())).collect();
    nodes.sort_unstable();
    let mut edges: Vec<(&str, &str, &str)> = g
        .edges()
        .iter()
        .map(|e| {
            let (a, b) = (g.node(e.src).id.as_str(), g.node(e.dst).id.as_str());
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            (a, b, e.text.as_deref().unwrap_or("-"))
        })
        .collect();
    edges.sort_unstable();
    let mut out = String::new();
    for (id, text) in nodes {
        out.push_str(&format!("node {id}: {text}\n"));
    }
    for (a, b, t) in edges {
        out.push_str(&format!("edge {a} -- {b}: {t}\n"));
    }
    out.pop();
    out
}

pub fn build_prompt(query: &str, textualization: &str) -> String {
    format!("Context:\n{textualization}\n\nQuestion: {query}\nAnswer:")
}

/// Sends the prompt to `chat`; without a provider returns the prompt and an
/// empty answer.
pub fn answer_query(query: &str, result: &RetrievalResult, chat: Option<&dyn ChatModel>) -> Result<Answer, ProviderError> {
    let prompt = build_prompt(query, &result.textualization);
    match chat {
        None => Ok(Answer {
            text: String::new(),
            prompt,
            provider: None,
        }),
        Some(c) => Ok(Answer {
            text: c.chat(&prompt)?,
            provider: Some(c.id()),
            prompt,
        }),
    }
}

/// Read-only query context over one loaded index.
pub struct Retriever<'a> {
    graph: &'a TextualAttributedGraph,
    tree: &'a EncodingTree,
    index: &'a TreeIndex,
    full_graph_tokens: usize,
}

impl<'a> Retriever<'a> {
    pub fn new(graph: &'a TextualAttributedGraph, tree: &'a EncodingTree, index: &'a TreeIndex) -> Self {
        Self {
            graph,
            tree,
            index,
            full_graph_tokens: whitespace_tokens(&textualize(graph)),
        }
    }

    pub fn full_graph_tokens(&self) -> usize {
        self.full_graph_tokens
    }

    pub fn retrieve_embedding(&self, query: &[f32], k: usize) -> Result<RetrievalResult> {
        let hits = top_k_nodes(self.index, query, k)?;
        let subgraph = extract_union_subgraph(self.tree, self.graph, &hits)?;
        let textualization = textualize(&subgraph);
        let tokens = TokenCounts {
            context: whitespace_tokens(&textualization),
            full_graph: self.full_graph_tokens,
        };
        Ok(RetrievalResult {
            hits,
            subgraph,
            textualization,
            tokens,
        })
    }

    pub fn retrieve(&self, query: &str, embedder: &dyn Embedder, k: usize) -> Result<RetrievalResult> {
        let z: EmbeddingMatrix = embedder.embed(&[query])?;
        if z.len() != 1 {
            return Err(ProviderError::CountMismatch {
                sent: 1,
                received: z.len(),
            }
            .into());
        }
        self.retrieve_embedding(z.row(0), k)
    }
}

#[derive(Serialize)]
struct HitOut {
    id: usize,
    level: usize,
    sim: f64,
}

#[derive(Serialize)]
struct NodeOut<'a> {
    id: &'a str,
    text: &'a str,
}

#[derive(Serialize)]
struct EdgeOut<'a> {
    src: &'a str,
    dst: &'a str,
    text: Option<&'a str>,
}

#[derive(Serialize)]
struct QueryOut<'a> {
    hits: Vec<HitOut>,
    nodes: Vec<NodeOut<'a>>,
    edges: Vec<EdgeOut<'a>>,
    textualization: &'a str,
    tokens: TokenCounts,
    answer: Option<&'a str>,
}

/// The `--json` query output.
pub fn result_json(result: &RetrievalResult, answer: Option<&Answer>) -> serde_json::Value {
    let g = &result.subgraph;
    let out = QueryOut {
        hits: result
            .hits
            .iter()
            .map(|h| HitOut {
                id: h.id,
                level: h.level,
                sim: h.sim,
            })
            .collect(),
        nodes: g
            .nodes()
            .iter()
            .map(|n| NodeOut {
                id: &n.id,
                text: &n.text,
            })
            .collect(),
        edges: g
            .edges()
            .iter()
            .map(|e| EdgeOut {
                src: &g.node(e.src).id,
                dst: &g.node(e.dst).id,
                text: e.text.as_deref(),
            })
            .collect(),
        textualization: &result.textualization,
        tokens: result.tokens,
        answer: answer.filter(|a| a.provider.is_some()).map(|a| a.text.as_str()),
    };
    serde_json::to_value(out).expect("query output serializes")
}
