//! Three-stage tree construction: recursive bipartition down to singletons,
//! height reduction by greedy pruning, then regulation of leaf depths.

use std::sync::OnceLock;

use rayon::prelude::*;

use super::partition::{bipartition, SolverConfig};
use super::{prune_delta_with, EncodingTree, TreeError, TreeNodeId};
use crate::entropy::EntropyModel;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    /// Height of the binary tree after stage 1.
    pub binary_height: usize,
    pub binary_nodes: usize,
    pub prunes: usize,
    pub regulated: usize,
}

/// Builds an encoding tree of height `levels` whose leaves are all
/// singletons at depth `levels`.
pub fn build_encoding_tree(
    model: &EntropyModel<'_>,
    levels: usize,
    cfg: &SolverConfig,
) -> Result<(EncodingTree, BuildStats), TreeError> {
    let g = model.graph();
    if g.node_count() == 0 {
        return Err(TreeError::EmptyGraph);
    }
    if levels == 0 {
        return Err(TreeError::ZeroHeight);
    }
    let mut tree = EncodingTree::root_only(g, levels);
    let mut stats = BuildStats::default();

    // Stage 1: split every multi-member leaf, one frontier at a time.
    let mut frontier: Vec<TreeNodeId> = vec![tree.root()];
    while !frontier.is_empty() {
        let work: Vec<TreeNodeId> = frontier.into_iter().filter(|&id| tree.node(id).len() > 1).collect();
        let splits = work
            .par_iter()
            .map(|&id| bipartition(model, &tree.node(id).members, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        frontier = Vec::with_capacity(2 * work.len());
        for (id, report) in work.into_iter().zip(splits) {
            frontier.push(tree.add_child(g, id, report.best.left));
            frontier.push(tree.add_child(g, id, report.best.right));
        }
    }
    stats.binary_height = tree.height();
    stats.binary_nodes = tree.len();

    // Stage 2: prune until no root-to-leaf path is longer than L.
    let semantic: Vec<OnceLock<f64>> = (0..tree.capacity()).map(|_| OnceLock::new()).collect();
    stats.prunes = reduce_height(&mut tree, model, &semantic)?;

    // Stage 3: stack pass-through nodes above shallow leaves.
    for leaf in tree.leaves() {
        while tree.node(leaf).depth < levels {
            let parent = match tree.node(leaf).parent {
                Some(p) => p,
                None => {
                    // Single-node graph: the root is its own leaf; give it a child.
                    let members = tree.node(leaf).members.clone();
                    let child = tree.add_child(g, leaf, members);
                    stats.regulated += 1;
                    regulate_down(&mut tree, child, levels, &mut stats)?;
                    break;
                }
            };
            tree.regulate(parent, leaf)?;
            stats.regulated += 1;
        }
    }
    tree.compact();
    Ok((tree, stats))
}

fn regulate_down(tree: &mut EncodingTree, leaf: TreeNodeId, levels: usize, stats: &mut BuildStats) -> Result<(), TreeError> {
    while tree.node(leaf).depth < levels {
        let parent = tree.node(leaf).parent.expect("non-root leaf");
        tree.regulate(parent, leaf)?;
        stats.regulated += 1;
    }
    Ok(())
}

/// Deepest leaf depth below each node.
fn max_leaf_depths(tree: &EncodingTree) -> Vec<usize> {
    let mut out = vec![0usize; tree.capacity()];
    let mut ids = tree.node_ids();
    ids.sort_by_key(|&id| std::cmp::Reverse(tree.node(id).depth));
    for id in ids {
        let n = tree.node(id);
        out[id] = if n.is_leaf() {
            n.depth
        } else {
            n.children.iter().map(|&c| out[c]).max().unwrap_or(n.depth)
        };
    }
    out
}

/// Greedy height reduction. Candidates are non-root internal nodes lying on
/// a root-to-leaf path longer than L; the one with the smallest entropy
/// increase is pruned, ties going to the smallest id. Returns the number of
/// prunes.
fn reduce_height(
    tree: &mut EncodingTree,
    model: &EntropyModel<'_>,
    semantic: &[OnceLock<f64>],
) -> Result<usize, TreeError> {
    let levels = tree.target_height();
    let mut cached: Vec<Option<f64>> = vec![None; tree.capacity()];
    let mut prunes = 0;
    while tree.height() > levels {
        let deepest = max_leaf_depths(tree);
        let candidates: Vec<TreeNodeId> = tree
            .node_ids()
            .into_iter()
            .filter(|&id| {
                let n = tree.node(id);
                n.parent.is_some() && !n.is_leaf() && deepest[id] > levels
            })
            .collect();
        let missing: Vec<TreeNodeId> = candidates.iter().copied().filter(|&id| cached[id].is_none()).collect();
        let fresh = {
            let t: &EncodingTree = tree;
            let sem = |id: TreeNodeId| *semantic[id].get_or_init(|| model.semantic(&t.node(id).members));
            missing
                .par_iter()
                .map(|&id| prune_delta_with(t, id, model, &sem))
                .collect::<Result<Vec<_>, _>>()?
        };
        for (id, d) in missing.into_iter().zip(fresh) {
            cached[id] = Some(d);
        }
        let mut best: Option<(TreeNodeId, f64)> = None;
        for &id in &candidates {
            let d = cached[id].expect("delta computed");
            let tol = 1e-12 * d.abs().max(1.0);
            if best.is_none_or(|(_, bd)| d < bd - tol) {
                best = Some((id, d));
            }
        }
        let (alpha, _) = best.expect("an over-long path always has an internal non-root node");
        let parent = tree.node(alpha).parent.expect("non-root");
        let children = tree.node(alpha).children.clone();
        tree.prune(alpha)?;
        prunes += 1;
        // Deltas depend on a node's parent and children only.
        cached[alpha] = None;
        cached[parent] = None;
        for c in children {
            cached[c] = None;
        }
    }
    Ok(prunes)
}
