//! Inverted-file (IVF) approximate search over unit-norm rows.
//!
//! A seeded spherical k-means partitions the rows into `nlist` cells; a
//! query scans the `nprobe` cells whose centroids are most similar.
//! `nprobe` is tuned upward until recall against the exact scan reaches the
//! requested target on a probe set of perturbed index rows.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, normalize_f64, EmbeddingMatrix};

const KMEANS_ITERS: usize = 12;
const PROBE_QUERIES: usize = 200;
const PROBE_K: usize = 10;
const PROBE_NOISE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnParams {
    pub nlist: usize,
    pub nprobe: usize,
    pub seed: u64,
    /// Recall@10 measured on the probe set at build time.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    params: AnnParams,
    centroids: EmbeddingMatrix,
    lists: Vec<Vec<usize>>,
}

/// `(row, similarity)` sorted by similarity descending, then row ascending.
pub(crate) fn rank(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub(crate) fn exact_top_k(rows: &EmbeddingMatrix, query: &[f32], k: usize) -> Vec<(usize, f64)> {
    rank(rows.rows().enumerate().map(|(i, r)| (i, dot(r, query))).collect(), k)
}

fn nearest_centroid(centroids: &EmbeddingMatrix, row: &[f32]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, z) in centroids.rows().enumerate() {
        let s = dot(z, row);
        if s > best.1 {
            best = (c, s);
        }
    }
    best.0
}

fn kmeans(rows: &EmbeddingMatrix, nlist: usize, seed: u64) -> (EmbeddingMatrix, Vec<Vec<usize>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = sample(&mut rng, rows.len(), nlist).into_vec();
    let mut centroids = rows.select(&init);
    let dim = rows.dim();
    let mut assign = vec![0usize; rows.len()];
    for _ in 0..KMEANS_ITERS {
        let next: Vec<usize> = (0..rows.len())
            .into_par_iter()
            .map(|i| nearest_centroid(&centroids, rows.row(i)))
            .collect();
        let changed = next != assign;
        assign = next;
        let mut sums = vec![vec![0.0f64; dim]; nlist];
        let mut counts = vec![0usize; nlist];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, &x) in sums[c].iter_mut().zip(rows.row(i)) {
                *s += x as f64;
            }
        }
        let mut fresh = EmbeddingMatrix::empty(dim);
        for c in 0..nlist {
            if counts[c] == 0 {
                // Empty cell keeps its previous centroid.
                fresh.push_row(centroids.row(c));
            } else {
                fresh.push_row(&normalize_f64(&sums[c]));
            }
        }
        centroids = fresh;
        if !changed {
            break;
        }
    }
    let mut lists = vec![Vec::new(); nlist];
    for (i, &c) in assign.iter().enumerate() {
        lists[c].push(i);
    }
    (centroids, lists)
}

impl IvfIndex {
    /// Builds the cells and picks the smallest power-of-two `nprobe`
    /// reaching `target_recall` (capped at `nlist`, where recall is exact).
    pub fn build(rows: &EmbeddingMatrix, seed: u64, target_recall: f64) -> Result<Self, String> {
        if rows.is_empty() {
            return Err("cannot build an ANN layer over zero rows".into());
        }
        let nlist = ((rows.len() as f64).sqrt().ceil() as usize).clamp(1, rows.len());
        let (centroids, lists) = kmeans(rows, nlist, seed);
        let mut index = IvfIndex {
            params: AnnParams {
                nlist,
                nprobe: 1,
                seed,
                recall: 0.0,
            },
            centroids,
            lists,
        };
        let probes = probe_set(rows, seed);
        let truth: Vec<Vec<(usize, f64)>> = probes.rows().map(|q| exact_top_k(rows, q, PROBE_K)).collect();
        let mut nprobe = 1;
        loop {
            index.params.nprobe = nprobe;
            let recall = index.recall(rows, &probes, &truth);
            index.params.recall = recall;
            if recall >= target_recall {
                return Ok(index);
            }
            if nprobe >= nlist {
                return Err(format!(
                    "ANN recall {recall:.3} is below the target {target_recall} even when probing every cell"
                ));
            }
            nprobe = (nprobe * 2).min(nlist);
        }
    }

    /// Rebuilds cells deterministically from stored parameters.
    pub fn rebuild(rows: &EmbeddingMatrix, params: AnnParams) -> Result<Self, String> {
        if rows.is_empty() || params.nlist == 0 || params.nlist > rows.len() || params.nprobe == 0 {
            return Err(format!("invalid ANN parameters {params:?} for {} rows", rows.len()));
        }
        let (centroids, lists) = kmeans(rows, params.nlist, params.seed);
        Ok(IvfIndex {
            params,
            centroids,
            lists,
        })
    }

    pub fn params(&self) -> AnnParams {
        self.params
    }

    pub fn search(&self, rows: &EmbeddingMatrix, query: &[f32], k: usize) -> Vec<(usize, f64)> {
        let cells = rank(
            self.centroids.rows().enumerate().map(|(c, z)| (c, dot(z, query))).collect(),
            self.params.nprobe,
        );
        let scored = cells
            .iter()
            .flat_map(|&(c, _)| self.lists[c].iter().map(|&i| (i, dot(rows.row(i), query))))
            .collect();
        rank(scored, k)
    }

    fn recall(&self, rows: &EmbeddingMatrix, probes: &EmbeddingMatrix, truth: &[Vec<(usize, f64)>]) -> f64 {
        let (hit, total) = probes
            .rows()
            .zip(truth)
            .map(|(q, t)| {
                let got = self.search(rows, q, PROBE_K);
                let found = t.iter().filter(|(i, _)| got.iter().any(|(j, _)| j == i)).count();
                (found, t.len())
            })
            .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
        if total == 0 {
            1.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Index rows perturbed by seeded noise and renormalized; none coincide
/// with an index row.
fn probe_set(rows: &EmbeddingMatrix, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = PROBE_QUERIES.min(rows.len());
    let picks = sample(&mut rng, rows.len(), n).into_vec();
    let mut out = EmbeddingMatrix::empty(rows.dim());
    for i in picks {
        let v: Vec<f64> = rows
            .row(i)
            .iter()
            .map(|&x| x as f64 + PROBE_NOISE * (rng.gen::<f64>() * 2.0 - 1.0))
            .collect();
        out.push_row(&normalize_f64(&v));
    }
    out
}
