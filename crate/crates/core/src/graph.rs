//! Textual attributed graphs: ingestion, degree/volume/cut accounting and
//! induced subgraphs.
//!
//! Graphs are undirected and immutable once built. Nodes keep the order in
//! which their records first appear in the input; that order defines the
//! node index (`NodeIx`) used everywhere else in the crate.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position of a node in [`TextualAttributedGraph::nodes`].
pub type NodeIx = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: unknown endpoint {id:?}")]
    UnknownEndpoint { line: usize, id: String },
    #[error("line {line}: self-loop on {id:?}")]
    SelfLoop { line: usize, id: String },
    #[error("line {line}: duplicate node id {id:?}")]
    DuplicateNode { line: usize, id: String },
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error("node index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("empty extraction")]
    EmptyExtraction,
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: String,
    pub text: String,
}

/// Undirected edge. `src`/`dst` keep the orientation of the first record
/// that introduced the pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub src: NodeIx,
    pub dst: NodeIx,
    pub text: Option<String>,
}

/// Counters gathered while loading a graph file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    /// Edge records dropped because the unordered pair was already present
    /// (this includes reversed copies of directed input).
    pub duplicate_edges: usize,
}

#[derive(Debug, Clone)]
pub struct TextualAttributedGraph {
    nodes: Vec<Node>,
    index: HashMap<String, NodeIx>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<NodeIx>>,
}

impl PartialEq for TextualAttributedGraph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.edges == other.edges
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Node {
        id: String,
        text: String,
    },
    Edge {
        src: String,
        dst: String,
        #[serde(default)]
        text: Option<String>,
    },
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RecordOut<'a> {
    Node {
        id: &'a str,
        text: &'a str,
    },
    Edge {
        src: &'a str,
        dst: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        text: Option<&'a str>,
    },
}

/// Incremental graph construction with the ingestion invariants enforced.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<String, NodeIx>,
    edges: Vec<Edge>,
    pairs: HashMap<(NodeIx, NodeIx), usize>,
    duplicate_edges: usize,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: &str, text: &str) -> Result<NodeIx, GraphError> {
        if self.index.contains_key(id) {
            return Err(GraphError::DuplicateNode {
                line: 0,
                id: id.to_string(),
            });
        }
        let ix = self.nodes.len();
        self.index.insert(id.to_string(), ix);
        self.nodes.push(Node {
            id: id.to_string(),
            text: text.to_string(),
        });
        Ok(ix)
    }

    /// Adds an undirected edge; returns `false` when the pair already exists.
    pub fn add_edge(&mut self, src: &str, dst: &str, text: Option<&str>) -> Result<bool, GraphError> {
        let s = *self.index.get(src).ok_or_else(|| GraphError::UnknownEndpoint {
            line: 0,
            id: src.to_string(),
        })?;
        let d = *self.index.get(dst).ok_or_else(|| GraphError::UnknownEndpoint {
            line: 0,
            id: dst.to_string(),
        })?;
        self.add_edge_ix(s, d, text.map(str::to_string))
    }

    pub fn add_edge_ix(&mut self, src: NodeIx, dst: NodeIx, text: Option<String>) -> Result<bool, GraphError> {
        let n = self.nodes.len();
        if src >= n {
            return Err(GraphError::IndexOutOfRange(src));
        }
        if dst >= n {
            return Err(GraphError::IndexOutOfRange(dst));
        }
        if src == dst {
            return Err(GraphError::SelfLoop {
                line: 0,
                id: self.nodes[src].id.clone(),
            });
        }
        let key = (src.min(dst), src.max(dst));
        if self.pairs.contains_key(&key) {
            self.duplicate_edges += 1;
            return Ok(false);
        }
        self.pairs.insert(key, self.edges.len());
        self.edges.push(Edge { src, dst, text });
        Ok(true)
    }

    pub fn finish(self) -> (TextualAttributedGraph, LoadReport) {
        let mut adjacency = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adjacency[e.src].push(e.dst);
            adjacency[e.dst].push(e.src);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        let report = LoadReport {
            nodes: self.nodes.len(),
            edges: self.edges.len(),
            duplicate_edges: self.duplicate_edges,
        };
        (
            TextualAttributedGraph {
                nodes: self.nodes,
                index: self.index,
                edges: self.edges,
                adjacency,
            },
            report,
        )
    }
}

fn with_line(err: GraphError, line: usize) -> GraphError {
    match err {
        GraphError::UnknownEndpoint { id, .. } => GraphError::UnknownEndpoint { line, id },
        GraphError::SelfLoop { id, .. } => GraphError::SelfLoop { line, id },
        GraphError::DuplicateNode { id, .. } => GraphError::DuplicateNode { line, id },
        other => other,
    }
}

/// Parses graph.jsonl content. Node records are registered before edge
/// records regardless of their position in the file.
pub fn parse_graph_jsonl(input: &str) -> Result<(TextualAttributedGraph, LoadReport), GraphError> {
    let mut node_records = Vec::new();
    let mut edge_records = Vec::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| GraphError::Malformed {
            line,
            msg: e.to_string(),
        })?;
        match rec {
            Record::Node { id, text } => node_records.push((line, id, text)),
            Record::Edge { src, dst, text } => edge_records.push((line, src, dst, text)),
        }
    }
    let mut builder = GraphBuilder::new();
    for (line, id, text) in &node_records {
        builder.add_node(id, text).map_err(|e| with_line(e, *line))?;
    }
    for (line, src, dst, text) in &edge_records {
        builder
            .add_edge(src, dst, text.as_deref())
            .map_err(|e| with_line(e, *line))?;
    }
    let (graph, report) = builder.finish();
    if report.duplicate_edges > 0 {
        log::warn!("dropped {} duplicate or reversed edge records", report.duplicate_edges);
    }
    Ok((graph, report))
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<(TextualAttributedGraph, LoadReport), GraphError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| GraphError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_graph_jsonl(&text)
}

impl TextualAttributedGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, ix: NodeIx) -> &Node {
        &self.nodes[ix]
    }

    pub fn index_of(&self, id: &str) -> Option<NodeIx> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, ix: NodeIx) -> &[NodeIx] {
        &self.adjacency[ix]
    }

    pub fn degree(&self, ix: NodeIx) -> usize {
        self.adjacency[ix].len()
    }

    /// Vol(G) = 2|E|.
    pub fn total_volume(&self) -> u64 {
        2 * self.edges.len() as u64
    }

    /// Sum of degrees over `members`.
    pub fn volume_of(&self, members: &[NodeIx]) -> u64 {
        members.iter().map(|&v| self.degree(v) as u64).sum()
    }

    /// Number of edges with exactly one endpoint in `members`, which must be
    /// sorted ascending.
    pub fn cut_of(&self, members: &[NodeIx]) -> u64 {
        debug_assert!(members.windows(2).all(|w| w[0] < w[1]));
        let mut cut = 0u64;
        for &v in members {
            for &u in self.neighbors(v) {
                if members.binary_search(&u).is_err() {
                    cut += 1;
                }
            }
        }
        cut
    }

    /// Edges with both endpoints in `members` (sorted ascending), in
    /// stored edge order.
    pub fn internal_edges<'a>(&'a self, members: &'a [NodeIx]) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| {
            members.binary_search(&e.src).is_ok() && members.binary_search(&e.dst).is_ok()
        })
    }

    /// The subgraph induced by `set`, keeping original texts and relative
    /// node/edge order.
    pub fn induced_subgraph(&self, set: &NodeSet) -> Result<TextualAttributedGraph, GraphError> {
        if set.is_empty() {
            return Err(GraphError::EmptyExtraction);
        }
        let mut b = GraphBuilder::new();
        let mut local = HashMap::with_capacity(set.len());
        for &v in set.members() {
            let node = &self.nodes[v];
            local.insert(v, b.add_node(&node.id, &node.text)?);
        }
        for e in self.internal_edges(set.members()) {
            b.add_edge_ix(local[&e.src], local[&e.dst], e.text.clone())?;
        }
        Ok(b.finish().0)
    }

    /// Canonical graph.jsonl serialization: node records then edge records,
    /// in stored order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let rec = RecordOut::Node {
                id: &n.id,
                text: &n.text,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        for e in &self.edges {
            let rec = RecordOut::Edge {
                src: &self.nodes[e.src].id,
                dst: &self.nodes[e.dst].id,
                text: e.text.as_deref(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// A sorted set of node indices with its volume and cut cached.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeSet {
    members: Vec<NodeIx>,
    volume: u64,
    cut: u64,
}

impl NodeSet {
    pub fn new(g: &TextualAttributedGraph, members: impl IntoIterator<Item = NodeIx>) -> Result<Self, GraphError> {
        let mut members: Vec<NodeIx> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if let Some(&bad) = members.iter().find(|&&v| v >= g.node_count()) {
            return Err(GraphError::IndexOutOfRange(bad));
        }
        Ok(Self::from_sorted_unchecked(g, members))
    }

    pub fn from_ids<S: AsRef<str>>(g: &TextualAttributedGraph, ids: &[S]) -> Result<Self, GraphError> {
        let members = ids
            .iter()
            .map(|id| {
                g.index_of(id.as_ref())
                    .ok_or_else(|| GraphError::UnknownNode(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(g, members)
    }

    pub fn all(g: &TextualAttributedGraph) -> Self {
        Self::from_sorted_unchecked(g, (0..g.node_count()).collect())
    }

    pub(crate) fn from_sorted_unchecked(g: &TextualAttributedGraph, members: Vec<NodeIx>) -> Self {
        let volume = g.volume_of(&members);
        let cut = g.cut_of(&members);
        Self { members, volume, cut }
    }

    pub fn members(&self) -> &[NodeIx] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, v: NodeIx) -> bool {
        self.members.binary_search(&v).is_ok()
    }

    pub fn is_subset_of(&self, other: &NodeSet) -> bool {
        self.members.iter().all(|&v| other.contains(v))
    }

    pub fn volume(&self) -> u64 {
        self.volume
    }

    pub fn cut(&self) -> u64 {
        self.cut
    }

    pub fn complement(&self, g: &TextualAttributedGraph) -> NodeSet {
        let rest = (0..g.node_count()).filter(|v| !self.contains(*v)).collect();
        Self::from_sorted_unchecked(g, rest)
    }
}

/// Vol(S): sum of member degrees.
pub fn volume(g: &TextualAttributedGraph, s: &NodeSet) -> u64 {
    g.volume_of(s.members())
}

/// g(S): edges with exactly one endpoint inside `s`.
pub fn cut_size(g: &TextualAttributedGraph, s: &NodeSet) -> u64 {
    g.cut_of(s.members())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn triangle() -> TextualAttributedGraph {
        let mut b = GraphBuilder::new();
        for id in ["a", "b", "c"] {
            b.add_node(id, &format!("text {id}")).unwrap();
        }
        b.add_edge("a", "b", Some("ab")).unwrap();
        b.add_edge("b", "c", Some("bc")).unwrap();
        b.add_edge("c", "a", Some("ca")).unwrap();
        b.finish().0
    }

    /// Two triangles joined by the bridge c–d.
    pub fn bridge() -> TextualAttributedGraph {
        let mut b = GraphBuilder::new();
        for id in ["a", "b", "c", "d", "e", "f"] {
            b.add_node(id, &format!("text {id}")).unwrap();
        }
        for (s, d) in [("a", "b"), ("b", "c"), ("c", "a"), ("d", "e"), ("e", "f"), ("f", "d"), ("c", "d")] {
            b.add_edge(s, d, None).unwrap();
        }
        b.finish().0
    }
}
