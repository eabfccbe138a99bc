//! Semantic-structural entropy.
//!
//! The per-tree-node cost is
//!
//! ```text
//! H(α) = −(g_α / Vol(G)) · log2(Vol(α) / Vol(α⁻))  +  λ · H_sem(α)
//! H_sem(α) = −(1/n_α) Σ_{v∈α} ln p(z_v),   p(z) = (1/n_α) Σ_{u∈α} K_h(z − z_u)
//! ```
//!
//! with a Gaussian kernel `K_h`. The structural part is in bits, the
//! semantic part in nats; λ absorbs the difference.
//!
//! A tree node whose set equals its parent's set (the lower half of a
//! pass-through pair) contributes exactly zero. Its structural part is
//! already `log2(1) = 0`; dropping the semantic part as well makes
//! inserting or removing pass-through nodes entropy-neutral.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{squared_distance, EmbeddingMatrix};
use crate::graph::{NodeIx, NodeSet, TextualAttributedGraph};
use crate::tree::EncodingTree;

pub const DEFAULT_SUBSAMPLE_CAP: usize = 2048;
pub const DEFAULT_BANDWIDTH_GRID: [f64; 6] = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];

#[derive(Debug, Error, PartialEq)]
pub enum EntropyError {
    #[error("invalid entropy parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty cluster")]
    EmptyCluster,
    #[error("child set is not a subset of the parent set")]
    NotSubset,
    #[error("embedding rows ({rows}) do not match graph nodes ({nodes})")]
    RowCount { rows: usize, nodes: usize },
    #[error("invalid tree: {0}")]
    InvalidTree(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyParams {
    pub lambda: f64,
    pub bandwidth: f64,
    pub dim: usize,
    /// Clusters larger than this use a seeded uniform subsample for H_sem.
    /// `None` always evaluates exactly.
    pub subsample_cap: Option<usize>,
    pub sample_seed: u64,
}

impl EntropyParams {
    pub fn new(lambda: f64, bandwidth: f64, dim: usize) -> Result<Self, EntropyError> {
        let p = Self {
            lambda,
            bandwidth,
            dim,
            subsample_cap: Some(DEFAULT_SUBSAMPLE_CAP),
            sample_seed: 0,
        };
        p.validate()?;
        Ok(p)
    }

    /// Same parameters with subsampling disabled.
    pub fn exact(mut self) -> Self {
        self.subsample_cap = None;
        self
    }

    pub fn validate(&self) -> Result<(), EntropyError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(EntropyError::InvalidParams(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(EntropyError::InvalidParams(format!(
                "bandwidth must be > 0, got {}",
                self.bandwidth
            )));
        }
        if self.dim == 0 {
            return Err(EntropyError::InvalidParams("dim must be >= 1".into()));
        }
        if self.subsample_cap == Some(0) {
            return Err(EntropyError::InvalidParams("subsample cap must be >= 1".into()));
        }
        Ok(())
    }

    /// ln of the kernel normalizer, −(d/2)·ln(2πh²).
    pub fn log_kernel_norm(&self) -> f64 {
        -(self.dim as f64 / 2.0) * (2.0 * std::f64::consts::PI * self.bandwidth * self.bandwidth).ln()
    }

    fn inv_two_h2(&self) -> f64 {
        1.0 / (2.0 * self.bandwidth * self.bandwidth)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// ln p(point) under the Gaussian KDE of `cluster`, evaluated with
/// log-sum-exp. A cluster row equal to `point` contributes its own kernel.
pub fn kde_log_density(point: &[f32], cluster: &EmbeddingMatrix, params: &EntropyParams) -> Result<f64, EntropyError> {
    params.validate()?;
    if cluster.is_empty() {
        return Err(EntropyError::EmptyCluster);
    }
    for got in [point.len(), cluster.dim()] {
        if got != params.dim {
            return Err(EntropyError::DimensionMismatch {
                expected: params.dim,
                got,
            });
        }
    }
    let scale = params.inv_two_h2();
    let lse = log_sum_exp(cluster.rows().map(|r| -squared_distance(point, r) * scale));
    Ok(lse - (cluster.len() as f64).ln() + params.log_kernel_norm())
}

/// Exact H_sem over explicit rows of `emb`.
fn semantic_entropy_rows(rows: &[usize], emb: &EmbeddingMatrix, params: &EntropyParams) -> f64 {
    let n = rows.len();
    let scale = params.inv_two_h2();
    // Collected before summing so the result does not depend on scheduling.
    let per_row: Vec<f64> = rows
        .par_iter()
        .with_min_len(64)
        .map(|&v| {
            let zv = emb.row(v);
            log_sum_exp(rows.iter().map(|&u| -squared_distance(zv, emb.row(u)) * scale))
        })
        .collect();
    let sum: f64 = per_row.iter().sum();
    -(sum / n as f64 - (n as f64).ln() + params.log_kernel_norm())
}

/// Seeded uniform subsample of a sorted member list, returned sorted.
pub(crate) fn subsample_members(members: &[NodeIx], cap: usize, seed: u64) -> Vec<NodeIx> {
    if members.len() <= cap {
        return members.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fingerprint(members));
    let mut picked: Vec<NodeIx> = sample(&mut rng, members.len(), cap)
        .into_iter()
        .map(|i| members[i])
        .collect();
    picked.sort_unstable();
    picked
}

/// FNV-1a over the member indices; used only for seeding.
pub(crate) fn fingerprint(members: &[NodeIx]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &m in members {
        for b in (m as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// H_sem of a cluster of graph nodes (nats). May be negative.
pub fn semantic_entropy(cluster: &NodeSet, emb: &EmbeddingMatrix, params: &EntropyParams) -> Result<f64, EntropyError> {
    semantic_entropy_of(cluster.members(), emb, params)
}

pub fn semantic_entropy_of(members: &[NodeIx], emb: &EmbeddingMatrix, params: &EntropyParams) -> Result<f64, EntropyError> {
    params.validate()?;
    if members.is_empty() {
        return Err(EntropyError::EmptyCluster);
    }
    if emb.dim() != params.dim {
        return Err(EntropyError::DimensionMismatch {
            expected: params.dim,
            got: emb.dim(),
        });
    }
    let rows = match params.subsample_cap {
        Some(cap) => subsample_members(members, cap, params.sample_seed),
        None => members.to_vec(),
    };
    Ok(semantic_entropy_rows(&rows, emb, params))
}

/// Structural term from raw counts; exactly 0 when the cut is 0.
pub fn structural_term_raw(cut: u64, volume: u64, parent_volume: u64, total_volume: u64) -> f64 {
    if cut == 0 || total_volume == 0 {
        return 0.0;
    }
    debug_assert!(volume > 0 && parent_volume >= volume);
    -(cut as f64 / total_volume as f64) * (volume as f64 / parent_volume as f64).log2()
}

/// −(g_α/Vol(G))·log2(Vol(α)/Vol(α⁻)) in bits.
pub fn structural_term(g: &TextualAttributedGraph, child: &NodeSet, parent: &NodeSet) -> Result<f64, EntropyError> {
    if !child.is_subset_of(parent) {
        return Err(EntropyError::NotSubset);
    }
    Ok(structural_term_raw(child.cut(), child.volume(), parent.volume(), g.total_volume()))
}

/// Structural term plus λ·H_sem(child); zero when `child == parent`.
pub fn s2_term(
    g: &TextualAttributedGraph,
    child: &NodeSet,
    parent: &NodeSet,
    emb: &EmbeddingMatrix,
    params: &EntropyParams,
) -> Result<f64, EntropyError> {
    let structural = structural_term(g, child, parent)?;
    if child.len() == parent.len() {
        return Ok(0.0);
    }
    if params.lambda == 0.0 {
        return Ok(structural);
    }
    Ok(structural + params.lambda * semantic_entropy(child, emb, params)?)
}

/// Totals over all non-root tree nodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TreeEntropy {
    /// Structural entropy in bits.
    pub structural: f64,
    /// Unweighted sum of H_sem over counted nodes (nats).
    pub semantic: f64,
    /// structural + λ·semantic.
    pub total: f64,
}

/// Shared evaluation context for one (graph, embeddings, params) triple.
/// H_sem values are memoized per member list.
pub struct EntropyModel<'a> {
    graph: &'a TextualAttributedGraph,
    emb: &'a EmbeddingMatrix,
    params: EntropyParams,
    cache: Mutex<HashMap<Vec<NodeIx>, f64>>,
}

impl<'a> EntropyModel<'a> {
    pub fn new(
        graph: &'a TextualAttributedGraph,
        emb: &'a EmbeddingMatrix,
        params: EntropyParams,
    ) -> Result<Self, EntropyError> {
        params.validate()?;
        if emb.dim() != params.dim {
            return Err(EntropyError::DimensionMismatch {
                expected: params.dim,
                got: emb.dim(),
            });
        }
        if emb.len() != graph.node_count() {
            return Err(EntropyError::RowCount {
                rows: emb.len(),
                nodes: graph.node_count(),
            });
        }
        Ok(Self {
            graph,
            emb,
            params,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn graph(&self) -> &'a TextualAttributedGraph {
        self.graph
    }

    pub fn embeddings(&self) -> &'a EmbeddingMatrix {
        self.emb
    }

    pub fn params(&self) -> &EntropyParams {
        &self.params
    }

    /// H_sem of a non-empty sorted member list.
    pub fn semantic(&self, members: &[NodeIx]) -> f64 {
        if let Some(&h) = self.cache.lock().unwrap().get(members) {
            return h;
        }
        let h = semantic_entropy_of(members, self.emb, &self.params).expect("validated model inputs");
        self.cache.lock().unwrap().insert(members.to_vec(), h);
        h
    }

    pub fn structural(&self, cut: u64, volume: u64, parent_volume: u64) -> f64 {
        structural_term_raw(cut, volume, parent_volume, self.graph.total_volume())
    }

    /// Full per-node term given the child's cached counts and the parent's
    /// size and volume.
    pub fn term(&self, members: &[NodeIx], cut: u64, volume: u64, parent_len: usize, parent_volume: u64) -> f64 {
        if members.len() == parent_len {
            return 0.0;
        }
        let s = self.structural(cut, volume, parent_volume);
        if self.params.lambda == 0.0 {
            s
        } else {
            s + self.params.lambda * self.semantic(members)
        }
    }

    /// Breakdown of the total tree entropy.
    pub fn tree_entropy(&self, tree: &EncodingTree) -> TreeEntropy {
        let mut out = TreeEntropy::default();
        for id in tree.node_ids() {
            let node = tree.node(id);
            let Some(pid) = node.parent else { continue };
            let parent = tree.node(pid);
            if node.len() == parent.len() {
                continue;
            }
            let s = self.structural(node.cut, node.volume, parent.volume);
            out.structural += s;
            if self.params.lambda != 0.0 {
                out.semantic += self.semantic(&node.members);
            }
        }
        out.total = out.structural + self.params.lambda * out.semantic;
        out
    }
}

/// Sum of per-node terms over every non-root node of `tree`.
pub fn total_tree_entropy(
    tree: &EncodingTree,
    g: &TextualAttributedGraph,
    emb: &EmbeddingMatrix,
    params: &EntropyParams,
) -> Result<f64, EntropyError> {
    tree.validate(g).map_err(|e| EntropyError::InvalidTree(e.to_string()))?;
    let model = EntropyModel::new(g, emb, *params)?;
    Ok(model.tree_entropy(tree).total)
}

/// Picks the grid bandwidth maximizing the mean leave-one-out log-density.
/// Ties go to the smallest bandwidth.
pub fn select_bandwidth(emb: &EmbeddingMatrix, grid: &[f64]) -> Result<f64, EntropyError> {
    select_bandwidth_capped(emb, grid, Some(DEFAULT_SUBSAMPLE_CAP), 0)
}

pub fn select_bandwidth_capped(
    emb: &EmbeddingMatrix,
    grid: &[f64],
    cap: Option<usize>,
    seed: u64,
) -> Result<f64, EntropyError> {
    if grid.is_empty() {
        return Err(EntropyError::InvalidParams("bandwidth grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|h| !(**h > 0.0) || !h.is_finite()) {
        return Err(EntropyError::InvalidParams(format!("bandwidth grid value {bad} is not positive")));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    if emb.len() < 2 {
        let mid = sorted[sorted.len() / 2];
        log::warn!("bandwidth selection needs at least 2 points; using grid midpoint {mid}");
        return Ok(mid);
    }
    let all: Vec<usize> = (0..emb.len()).collect();
    let rows = match cap {
        Some(c) => subsample_members(&all, c.max(2), seed),
        None => all,
    };
    let n = rows.len();
    let dists: Vec<Vec<f64>> = rows
        .par_iter()
        .map(|&i| rows.iter().map(|&j| squared_distance(emb.row(i), emb.row(j))).collect())
        .collect();
    let d = emb.dim() as f64;
    let mut best = (sorted[0], f64::NEG_INFINITY);
    for &h in &sorted {
        let scale = 1.0 / (2.0 * h * h);
        let norm = -(d / 2.0) * (2.0 * std::f64::consts::PI * h * h).ln();
        let per_row: Vec<f64> = dists
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                let lse = log_sum_exp(row.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, &d2)| -d2 * scale));
                lse - ((n - 1) as f64).ln() + norm
            })
            .collect();
        let score = per_row.iter().sum::<f64>() / n as f64;
        if score > best.1 {
            best = (h, score);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{bridge, triangle};
    use std::f64::consts::PI;

    fn params2(lambda: f64) -> EntropyParams {
        EntropyParams::new(lambda, 1.0, 2).unwrap().exact()
    }

    fn flat_emb(n: usize, d: usize) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::empty(d);
        for i in 0..n {
            let mut r = vec![0.0f32; d];
            r[i % d] = 1.0;
            m.push_row(&r);
        }
        m
    }

    #[test]
    fn kde_singleton_and_duplicates() {
        let p = params2(1.0);
        let single = EmbeddingMatrix::from_rows(&[[0.3f32, 0.4]]).unwrap();
        let expected = -(2.0 / 2.0) * (2.0 * PI).ln();
        assert!((kde_log_density(&[0.3, 0.4], &single, &p).unwrap() - expected).abs() < 1e-12);
        let twice = EmbeddingMatrix::from_rows(&[[0.3f32, 0.4], [0.3, 0.4]]).unwrap();
        assert!((kde_log_density(&[0.3, 0.4], &twice, &p).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn kde_two_points_against_scalar_oracle() {
        let p = params2(1.0);
        let cluster = EmbeddingMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0]]).unwrap();
        let k0 = 1.0 / (2.0 * PI);
        let k1 = (-0.5f64).exp() / (2.0 * PI);
        let oracle = ((k0 + k1) / 2.0).ln();
        assert!((kde_log_density(&[0.0, 0.0], &cluster, &p).unwrap() - oracle).abs() < 1e-12);
        assert!((kde_log_density(&[1.0, 0.0], &cluster, &p).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn kde_errors() {
        let cluster = EmbeddingMatrix::from_rows(&[[0.0f32, 0.0]]).unwrap();
        let mut p = params2(1.0);
        assert!(matches!(
            kde_log_density(&[0.0, 0.0, 0.0], &cluster, &p),
            Err(EntropyError::DimensionMismatch { .. })
        ));
        p.bandwidth = 0.0;
        assert!(matches!(kde_log_density(&[0.0, 0.0], &cluster, &p), Err(EntropyError::InvalidParams(_))));
        assert!(EntropyParams::new(-1.0, 1.0, 2).is_err());
    }

    #[test]
    fn semantic_entropy_examples() {
        let g = triangle();
        let p = params2(1.0);
        let emb = EmbeddingMatrix::from_rows(&[[0.0f32, 0.0], [1.0, 0.0], [0.0, 0.0]]).unwrap();
        let single = NodeSet::from_ids(&g, &["b"]).unwrap();
        let singleton_value = (2.0 * PI).ln();
        assert!((semantic_entropy(&single, &emb, &p).unwrap() - singleton_value).abs() < 1e-12);
        let same = NodeSet::from_ids(&g, &["a", "c"]).unwrap();
        assert!((semantic_entropy(&same, &emb, &p).unwrap() - singleton_value).abs() < 1e-12);
        let pair = NodeSet::from_ids(&g, &["a", "b"]).unwrap();
        let k0 = 1.0 / (2.0 * PI);
        let k1 = (-0.5f64).exp() / (2.0 * PI);
        let oracle = -((k0 + k1) / 2.0).ln();
        assert!((semantic_entropy(&pair, &emb, &p).unwrap() - oracle).abs() < 1e-12);
        let empty = NodeSet::new(&g, []).unwrap();
        assert_eq!(semantic_entropy(&empty, &emb, &p), Err(EntropyError::EmptyCluster));
    }

    #[test]
    fn structural_examples() {
        let b = bridge();
        let abc = NodeSet::from_ids(&b, &["a", "b", "c"]).unwrap();
        let all = NodeSet::all(&b);
        assert!((structural_term(&b, &abc, &all).unwrap() - 1.0 / 14.0).abs() < 1e-15);
        let t = triangle();
        let a = NodeSet::from_ids(&t, &["a"]).unwrap();
        let v = structural_term(&t, &a, &NodeSet::all(&t)).unwrap();
        assert!((v - 3f64.log2() / 3.0).abs() < 1e-15);
        assert!((v - 0.5283).abs() < 1e-4);
        assert_eq!(structural_term(&t, &NodeSet::all(&t), &a), Err(EntropyError::NotSubset));
        assert_eq!(structural_term_raw(0, 0, 0, 6), 0.0);
    }

    #[test]
    fn s2_term_examples() {
        let t = triangle();
        let emb = flat_emb(3, 2);
        let a = NodeSet::from_ids(&t, &["a"]).unwrap();
        let all = NodeSet::all(&t);
        let s = structural_term(&t, &a, &all).unwrap();
        assert_eq!(s2_term(&t, &a, &all, &emb, &params2(0.0)).unwrap(), s);
        let v = s2_term(&t, &a, &all, &emb, &params2(1.0)).unwrap();
        assert!((v - (3f64.log2() / 3.0 + (2.0 * PI).ln())).abs() < 1e-12);
        assert_eq!(s2_term(&t, &a, &a, &emb, &params2(1.0)).unwrap(), 0.0);
    }

    #[test]
    fn log_sum_exp_matches_naive() {
        let vals = [-1.0, -2.5, 0.3, -0.7];
        let naive = vals.iter().map(|v: &f64| v.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(vals.iter().copied()) - naive).abs() < 1e-12);
        assert_eq!(log_sum_exp(std::iter::empty()), f64::NEG_INFINITY);
        let far = [-1000.0, -1001.0];
        assert!(log_sum_exp(far.iter().copied()).is_finite());
    }

    #[test]
    fn bandwidth_identical_points_prefers_smallest() {
        let emb = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(select_bandwidth(&emb, &DEFAULT_BANDWIDTH_GRID).unwrap(), 0.05);
        assert_eq!(select_bandwidth(&emb, &[0.7]).unwrap(), 0.7);
        let one = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0]]).unwrap();
        assert_eq!(select_bandwidth(&one, &[0.1, 0.2, 0.4]).unwrap(), 0.2);
        assert!(select_bandwidth(&emb, &[]).is_err());
    }

    #[test]
    fn subsample_is_deterministic_and_sized() {
        let members: Vec<usize> = (0..100).collect();
        let a = subsample_members(&members, 10, 7);
        assert_eq!(a.len(), 10);
        assert_eq!(a, subsample_members(&members, 10, 7));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample_members(&members[..5], 10, 7), members[..5].to_vec());
    }
}
