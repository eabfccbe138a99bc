//! Brute-force oracles and synthetic instance generators.
//!
//! The oracles here share no code with the optimized paths: cuts, volumes
//! and kernel sums are recomputed from the raw edge list and rows.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::entropy::{EntropyError, EntropyParams};
use crate::graph::{GraphBuilder, NodeIx, TextualAttributedGraph};
use crate::tree::{EncodingTree, TreeError, TreeNodeId};

/// Largest cluster [`enumerate_bipartitions`] accepts.
pub const MAX_ENUMERATION: usize = 20;

fn membership(n: usize, set: &[NodeIx]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &v in set {
        m[v] = true;
    }
    m
}

fn oracle_cut(g: &TextualAttributedGraph, inside: &[bool]) -> f64 {
    g.edges().iter().filter(|e| inside[e.src] != inside[e.dst]).count() as f64
}

fn oracle_volume(g: &TextualAttributedGraph, inside: &[bool]) -> f64 {
    g.edges()
        .iter()
        .map(|e| inside[e.src] as usize + inside[e.dst] as usize)
        .sum::<usize>() as f64
}

/// H_sem by a direct double loop over rows, with the log of each density
/// taken through a max-shifted sum.
fn oracle_semantic(set: &[NodeIx], emb: &EmbeddingMatrix, params: &EntropyParams) -> f64 {
    let n = set.len() as f64;
    let h2 = params.bandwidth * params.bandwidth;
    let log_norm = -(params.dim as f64) / 2.0 * (2.0 * std::f64::consts::PI * h2).ln();
    let mut total = 0.0;
    for &v in set {
        let exponents: Vec<f64> = set
            .iter()
            .map(|&u| {
                let mut d2 = 0.0;
                for k in 0..params.dim {
                    let diff = emb.row(v)[k] as f64 - emb.row(u)[k] as f64;
                    d2 += diff * diff;
                }
                -d2 / (2.0 * h2)
            })
            .collect();
        let m = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = exponents.iter().map(|x| (x - m).exp()).sum();
        total += log_norm + m + s.ln() - n.ln();
    }
    -total / n
}

fn oracle_term(
    g: &TextualAttributedGraph,
    child: &[NodeIx],
    parent: &[NodeIx],
    emb: &EmbeddingMatrix,
    params: &EntropyParams,
) -> f64 {
    if child.len() == parent.len() {
        return 0.0;
    }
    let n = g.node_count();
    let c = membership(n, child);
    let p = membership(n, parent);
    let vol_g = 2.0 * g.edges().len() as f64;
    let cut = oracle_cut(g, &c);
    let structural = if cut == 0.0 {
        0.0
    } else {
        -(cut / vol_g) * (oracle_volume(g, &c) / oracle_volume(g, &p)).log2()
    };
    if params.lambda == 0.0 {
        structural
    } else {
        structural + params.lambda * oracle_semantic(child, emb, params)
    }
}

/// Total S² entropy recomputed from scratch. Always evaluates H_sem over
/// full clusters (no subsampling).
pub fn oracle_total_entropy(
    tree: &EncodingTree,
    g: &TextualAttributedGraph,
    emb: &EmbeddingMatrix,
    params: &EntropyParams,
) -> Result<f64, EntropyError> {
    tree.validate(g).map_err(|e| EntropyError::InvalidTree(e.to_string()))?;
    let mut total = 0.0;
    for id in tree.node_ids() {
        let node = tree.node(id);
        if let Some(p) = node.parent {
            total += oracle_term(g, &node.members, &tree.node(p).members, emb, params);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    /// Side containing the smallest member.
    pub left: Vec<NodeIx>,
    pub right: Vec<NodeIx>,
    pub objective: f64,
}

/// Scans all 2^(n−1)−1 bipartitions of `cluster` (sorted, distinct) and
/// returns the one minimizing the sum of both sides' terms under the
/// cluster. Ties go to the lexicographically smallest left side.
pub fn enumerate_bipartitions(
    g: &TextualAttributedGraph,
    cluster: &[NodeIx],
    emb: &EmbeddingMatrix,
    params: &EntropyParams,
) -> Result<OracleSplit, TreeError> {
    let n = cluster.len();
    if n > MAX_ENUMERATION {
        return Err(TreeError::ClusterTooLarge(n));
    }
    if n < 2 {
        return Err(TreeError::Invalid("need at least two members".into()));
    }
    let mut best: Option<OracleSplit> = None;
    for mask in 0u32..(1u32 << (n - 1)) {
        // Bit j of the mask puts cluster[j + 1] on the right.
        let mut left = vec![cluster[0]];
        let mut right = Vec::new();
        for j in 1..n {
            if mask >> (j - 1) & 1 == 1 {
                right.push(cluster[j]);
            } else {
                left.push(cluster[j]);
            }
        }
        if right.is_empty() {
            continue;
        }
        let objective = oracle_term(g, &left, cluster, emb, params) + oracle_term(g, &right, cluster, emb, params);
        let replace = match &best {
            None => true,
            Some(b) => {
                let tol = 1e-12 * b.objective.abs().max(1.0);
                objective < b.objective - tol || ((objective - b.objective).abs() <= tol && left < b.left)
            }
        };
        if replace {
            best = Some(OracleSplit { left, right, objective });
        }
    }
    Ok(best.expect("n >= 2 has a bipartition"))
}

/// `n` nodes `n0..`, each pair joined with probability `p`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> TextualAttributedGraph {
    let mut b = GraphBuilder::new();
    for i in 0..n {
        b.add_node(&format!("n{i}"), &format!("node {i}")).expect("fresh id");
    }
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                b.add_edge_ix(i, j, None).expect("valid edge");
            }
        }
    }
    b.finish().0
}

/// `n` rows drawn uniformly from the unit sphere in `dim` dimensions (up to
/// f32 rounding).
pub fn random_unit_rows(n: usize, dim: usize, rng: &mut impl Rng) -> EmbeddingMatrix {
    let mut m = EmbeddingMatrix::empty(dim);
    for _ in 0..n {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        m.push_row(&crate::embedding::normalize_f64(&v));
    }
    m
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// A random valid tree of height at most `max_height`: every multi-member
/// node above the height limit is split into 2 or 3 random parts, some
/// nodes stop early as (non-singleton) leaves, and some edges receive
/// pass-through nodes.
pub fn random_tree(g: &TextualAttributedGraph, max_height: usize, rng: &mut impl Rng) -> EncodingTree {
    let mut t = EncodingTree::root_only(g, max_height);
    let mut stack = vec![t.root()];
    while let Some(id) = stack.pop() {
        let node = t.node(id);
        let (depth, members) = (node.depth, node.members.clone());
        if depth >= max_height || members.len() < 2 {
            continue;
        }
        if depth > 0 && rng.gen_bool(0.15) {
            continue;
        }
        if depth + 1 < max_height && rng.gen_bool(0.1) {
            // Single child with the same set.
            stack.push(t.add_child(g, id, members));
            continue;
        }
        let parts = rng.gen_range(2..=3usize).min(members.len());
        let mut shuffled = members.clone();
        shuffled.shuffle(rng);
        let mut groups: Vec<Vec<NodeIx>> = vec![Vec::new(); parts];
        for (i, v) in shuffled.into_iter().enumerate() {
            let slot = if i < parts { i } else { rng.gen_range(0..parts) };
            groups[slot].push(v);
        }
        for mut grp in groups {
            grp.sort_unstable();
            stack.push(t.add_child(g, id, grp));
        }
    }
    t
}

/// All (parent, child) pairs of `tree`.
pub fn tree_edges(tree: &EncodingTree) -> Vec<(TreeNodeId, TreeNodeId)> {
    tree.node_ids()
        .into_iter()
        .filter_map(|id| tree.node(id).parent.map(|p| (p, id)))
        .collect()
}

/// Label of every graph node: index of the level-`depth` tree node holding
/// it (levels are taken in ascending id order).
pub fn level_labels(tree: &EncodingTree, depth: usize, n: usize) -> Vec<usize> {
    let mut labels = vec![usize::MAX; n];
    for (label, id) in tree.level(depth).into_iter().enumerate() {
        for &v in &tree.node(id).members {
            labels[v] = label;
        }
    }
    labels
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ra: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = joint.values().map(|&c| choose2(c as f64)).sum();
    let sa: f64 = ra.values().map(|&c| choose2(c as f64)).sum();
    let sb: f64 = rb.values().map(|&c| choose2(c as f64)).sum();
    let expected = sa * sb / choose2(n);
    let max = (sa + sb) / 2.0;
    if (max - expected).abs() < 1e-15 {
        // Both labelings are the same trivial partition.
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantedKind {
    Sbm,
    Path,
    Barbell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticLayout {
    /// Semantic cluster = structural block.
    Aligned,
    /// Semantic clusters cut across blocks.
    Misaligned,
    /// Path/barbell: the two far ends share an embedding; every other node
    /// gets its own direction.
    EndpointsIdentical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub kind: PlantedKind,
    pub n: usize,
    pub seed: u64,
    pub layout: SemanticLayout,
    /// Blocks for `sbm`.
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub dim: usize,
    /// Per-coordinate noise amplitude added to cluster centers.
    pub noise: f64,
}

impl PlantedSpec {
    pub fn new(kind: PlantedKind, n: usize, seed: u64, layout: SemanticLayout) -> Self {
        Self {
            kind,
            n,
            seed,
            layout,
            blocks: 4,
            p_in: 0.3,
            p_out: 0.02,
            dim: 16,
            noise: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n < 4 {
            return Err(format!("n must be >= 4, got {}", self.n));
        }
        if self.dim == 0 {
            return Err("dim must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err("edge probabilities must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err("noise must be >= 0".into());
        }
        match self.kind {
            PlantedKind::Sbm if self.blocks < 1 || self.blocks > self.n => {
                Err(format!("blocks must be in 1..={}, got {}", self.n, self.blocks))
            }
            PlantedKind::Sbm if self.layout == SemanticLayout::EndpointsIdentical => {
                Err("endpoints-identical applies to path and barbell only".into())
            }
            _ if self.layout == SemanticLayout::EndpointsIdentical && self.dim < self.n - 1 => Err(format!(
                "endpoints-identical needs dim >= n - 1 = {}, got {}",
                self.n - 1,
                self.dim
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub graph: TextualAttributedGraph,
    pub embeddings: EmbeddingMatrix,
    /// Planted structural block of every node.
    pub blocks: Vec<usize>,
    /// Planted semantic cluster of every node.
    pub semantic: Vec<usize>,
}

#[derive(Serialize)]
struct LabelsOut<'a> {
    ids: Vec<&'a str>,
    blocks: &'a [usize],
    semantic: &'a [usize],
}

impl PlantedInstance {
    /// `labels.json`: node ids with their block and semantic labels.
    pub fn labels_json(&self) -> String {
        let out = LabelsOut {
            ids: self.graph.nodes().iter().map(|n| n.id.as_str()).collect(),
            blocks: &self.blocks,
            semantic: &self.semantic,
        };
        serde_json::to_string_pretty(&out).expect("labels serialize")
    }
}

const TOPICS: [[&str; 8]; 8] = [
    ["star", "orbit", "comet", "galaxy", "nebula", "planet", "telescope", "eclipse"],
    ["river", "delta", "estuary", "current", "basin", "flood", "tributary", "levee"],
    ["violin", "cello", "sonata", "chord", "melody", "tempo", "octave", "quartet"],
    ["enzyme", "protein", "cell", "gene", "membrane", "ribosome", "mutation", "kinase"],
    ["castle", "knight", "siege", "banner", "throne", "moat", "herald", "armor"],
    ["wheat", "harvest", "barley", "orchard", "tractor", "silo", "furrow", "plough"],
    ["ledger", "invoice", "tariff", "dividend", "auditor", "budget", "equity", "bond"],
    ["glacier", "tundra", "permafrost", "iceberg", "fjord", "blizzard", "floe", "crevasse"],
];

fn topic_text(rng: &mut impl Rng, topic: usize, node: usize) -> String {
    let words = &TOPICS[topic % TOPICS.len()];
    let mut picked: Vec<&str> = words.choose_multiple(rng, 3).copied().collect();
    picked.sort_unstable();
    let suffix = if topic >= TOPICS.len() {
        format!(" variant{}", topic / TOPICS.len())
    } else {
        String::new()
    };
    format!("entity{node} {}{suffix}", picked.join(" "))
}

fn basis(dim: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[k % dim] = 1.0;
    v
}

/// Deterministic synthetic instance for `spec`.
pub fn gen_planted(spec: &PlantedSpec) -> Result<PlantedInstance, String> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n;
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let blocks: Vec<usize> = match spec.kind {
        PlantedKind::Sbm => {
            let b: Vec<usize> = (0..n).map(|v| v * spec.blocks / n).collect();
            for i in 0..n {
                for j in i + 1..n {
                    let p = if b[i] == b[j] { spec.p_in } else { spec.p_out };
                    if rng.gen_bool(p) {
                        edges.push((i, j));
                    }
                }
            }
            b
        }
        PlantedKind::Path => {
            edges.extend((1..n).map(|i| (i - 1, i)));
            (0..n).map(|v| usize::from(2 * v >= n)).collect()
        }
        PlantedKind::Barbell => {
            let half = n / 2;
            for i in 0..half {
                for j in i + 1..half {
                    edges.push((i, j));
                }
            }
            for i in half..n {
                for j in i + 1..n {
                    edges.push((i, j));
                }
            }
            edges.push((half - 1, half));
            (0..n).map(|v| usize::from(v >= half)).collect()
        }
    };
    let clusters = blocks.iter().max().copied().unwrap_or(0) + 1;
    let semantic: Vec<usize> = match spec.layout {
        SemanticLayout::Aligned => blocks.clone(),
        SemanticLayout::Misaligned => (0..n).map(|v| v % clusters).collect(),
        SemanticLayout::EndpointsIdentical => (0..n).map(|v| if v == n - 1 { 0 } else { v }).collect(),
    };

    let mut emb = EmbeddingMatrix::empty(spec.dim);
    for v in 0..n {
        let mut z = basis(spec.dim, semantic[v]);
        if spec.layout != SemanticLayout::EndpointsIdentical {
            for x in z.iter_mut() {
                *x += spec.noise * (rng.gen::<f64>() * 2.0 - 1.0);
            }
        }
        emb.push_row(&crate::embedding::normalize_f64(&z));
    }

    let mut b = GraphBuilder::new();
    for v in 0..n {
        b.add_node(&format!("v{v:04}"), &topic_text(&mut rng, semantic[v], v))
            .expect("fresh id");
    }
    for (i, j) in edges {
        let text = if blocks[i] == blocks[j] { "related to" } else { "linked with" };
        b.add_edge_ix(i, j, Some(text.to_string())).expect("valid edge");
    }
    Ok(PlantedInstance {
        graph: b.finish().0,
        embeddings: emb,
        blocks,
        semantic,
    })
}

/// Hop distance between two nodes, `None` if disconnected.
pub fn geodesic(g: &TextualAttributedGraph, a: NodeIx, b: NodeIx) -> Option<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[a] = 0;
    let mut q = VecDeque::from([a]);
    while let Some(v) = q.pop_front() {
        if v == b {
            return Some(dist[v]);
        }
        for &u in g.neighbors(v) {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                q.push_back(u);
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalyticInstance {
    pub graph: TextualAttributedGraph,
    pub embeddings: EmbeddingMatrix,
    pub u: NodeIx,
    pub v: NodeIx,
    pub delta: f64,
    pub gamma: usize,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
}

impl CatalyticInstance {
    /// The shipped instance: a 5-node path whose endpoints share an
    /// embedding while the three interior nodes are mutually orthogonal.
    pub fn shipped() -> Self {
        let spec = PlantedSpec {
            dim: 4,
            ..PlantedSpec::new(PlantedKind::Path, 5, 0, SemanticLayout::EndpointsIdentical)
        };
        let inst = gen_planted(&spec).expect("valid spec");
        Self {
            graph: inst.graph,
            embeddings: inst.embeddings,
            u: 0,
            v: 4,
            delta: 0.05,
            gamma: 3,
            bandwidth: 0.2,
            grid: (0..=40).map(|i| i as f64 * 0.25).collect(),
        }
    }

    /// sim(z_u, z_v) > 1 − δ and d_G(u, v) > γ.
    pub fn check(&self) -> Result<(), String> {
        let sim = crate::embedding::dot(self.embeddings.row(self.u), self.embeddings.row(self.v));
        if !(sim > 1.0 - self.delta) {
            return Err(format!("similarity {sim} is not above 1 - delta"));
        }
        match geodesic(&self.graph, self.u, self.v) {
            Some(d) if d > self.gamma => Ok(()),
            d => Err(format!("geodesic distance {d:?} is not above gamma = {}", self.gamma)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub together: bool,
    pub objective: f64,
    /// Node ids on u's side of the optimal root split.
    pub u_side: Vec<String>,
    /// Nodes other than u and v on u's side while u and v are together.
    pub bridging: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Smallest grid λ at which u and v share a side.
    pub lambda0: Option<f64>,
    /// Grid λ values at which co-clustering was lost again after λ₀.
    pub violations: Vec<f64>,
}

/// Exhaustive optimal root bipartition at every grid λ.
pub fn catalytic_sweep(inst: &CatalyticInstance, grid: &[f64]) -> Result<SweepReport, String> {
    if grid.is_empty() {
        return Err("lambda grid is empty".into());
    }
    let g = &inst.graph;
    let all: Vec<NodeIx> = (0..g.node_count()).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let params = EntropyParams::new(lambda, inst.bandwidth, inst.embeddings.dim())
            .map_err(|e| e.to_string())?
            .exact();
        let split = enumerate_bipartitions(g, &all, &inst.embeddings, &params).map_err(|e| e.to_string())?;
        let u_side = if split.left.contains(&inst.u) { &split.left } else { &split.right };
        let together = u_side.contains(&inst.v);
        let ids = |s: &[NodeIx]| s.iter().map(|&x| g.node(x).id.clone()).collect::<Vec<_>>();
        let bridging: Vec<NodeIx> = if together {
            u_side.iter().copied().filter(|&x| x != inst.u && x != inst.v).collect()
        } else {
            Vec::new()
        };
        rows.push(SweepRow {
            lambda,
            together,
            objective: split.objective,
            u_side: ids(u_side),
            bridging: ids(&bridging),
        });
    }
    let first = rows.iter().position(|r| r.together);
    let violations = match first {
        Some(i) => rows[i..].iter().filter(|r| !r.together).map(|r| r.lambda).collect(),
        None => Vec::new(),
    };
    Ok(SweepReport {
        lambda0: first.map(|i| rows[i].lambda),
        rows,
        violations,
    })
}
