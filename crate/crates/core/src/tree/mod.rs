//! Encoding trees over a graph's node set.
//!
//! Every tree node owns the sorted member list of the graph nodes below it
//! together with that set's volume and cut. Node ids are arena slots; pruned
//! nodes leave a hole until [`EncodingTree::compact`] renumbers the tree in
//! breadth-first order.

mod build;
mod partition;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::entropy::EntropyModel;
use crate::graph::{NodeIx, TextualAttributedGraph};

pub use build::{build_encoding_tree, BuildStats};
pub use partition::{bipartition, partition_node, Bipartition, PartitionReport, SeedOutcome, SolverConfig};

pub type TreeNodeId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree node {0} does not exist")]
    NotFound(TreeNodeId),
    #[error("cannot prune the root")]
    PruneRoot,
    #[error("cannot prune leaf {0}")]
    PruneLeaf(TreeNodeId),
    #[error("node {alpha} is not the parent of {beta}")]
    NotParent { alpha: TreeNodeId, beta: TreeNodeId },
    #[error("cannot partition node {0}: fewer than two members")]
    Singleton(TreeNodeId),
    #[error("cannot partition node {0}: it already has children")]
    HasChildren(TreeNodeId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("target height must be at least 1")]
    ZeroHeight,
    #[error("cluster of {0} nodes is too large for exhaustive enumeration")]
    ClusterTooLarge(usize),
    #[error("invalid tree: {0}")]
    Invalid(String),
    #[error("malformed tree.json: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: TreeNodeId,
    pub parent: Option<TreeNodeId>,
    pub children: Vec<TreeNodeId>,
    pub depth: usize,
    pub members: Vec<NodeIx>,
    pub volume: u64,
    pub cut: u64,
}

impl TreeNode {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingTree {
    slots: Vec<Option<TreeNode>>,
    root: TreeNodeId,
    target_height: usize,
}

impl EncodingTree {
    /// A tree holding only the root, which covers every graph node.
    pub fn root_only(g: &TextualAttributedGraph, target_height: usize) -> Self {
        let members: Vec<NodeIx> = (0..g.node_count()).collect();
        let root = TreeNode {
            id: 0,
            parent: None,
            children: Vec::new(),
            depth: 0,
            volume: g.total_volume(),
            cut: 0,
            members,
        };
        Self {
            slots: vec![Some(root)],
            root: 0,
            target_height,
        }
    }

    pub fn root(&self) -> TreeNodeId {
        self.root
    }

    /// Target height L.
    pub fn target_height(&self) -> usize {
        self.target_height
    }

    pub fn set_target_height(&mut self, l: usize) {
        self.target_height = l;
    }

    pub fn contains(&self, id: TreeNodeId) -> bool {
        matches!(self.slots.get(id), Some(Some(_)))
    }

    pub fn node(&self, id: TreeNodeId) -> &TreeNode {
        self.slots[id].as_ref().expect("live tree node")
    }

    fn node_mut(&mut self, id: TreeNodeId) -> &mut TreeNode {
        self.slots[id].as_mut().expect("live tree node")
    }

    pub fn get(&self, id: TreeNodeId) -> Result<&TreeNode, TreeError> {
        self.slots
            .get(id)
            .and_then(Option::as_ref)
            .ok_or(TreeError::NotFound(id))
    }

    /// Live node ids in ascending order.
    pub fn node_ids(&self) -> Vec<TreeNodeId> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|_| i))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.slots.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upper bound (exclusive) on node ids, including holes.
    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn height(&self) -> usize {
        self.slots.iter().flatten().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> Vec<TreeNodeId> {
        self.slots.iter().flatten().filter(|n| n.is_leaf()).map(|n| n.id).collect()
    }

    /// Ids at the given depth, in ascending id order.
    pub fn level(&self, depth: usize) -> Vec<TreeNodeId> {
        self.slots.iter().flatten().filter(|n| n.depth == depth).map(|n| n.id).collect()
    }

    /// A node with exactly one child whose set equals its own; the child
    /// then contributes zero entropy.
    pub fn is_pass_through(&self, id: TreeNodeId) -> bool {
        let n = self.node(id);
        n.children.len() == 1 && self.node(n.children[0]).len() == n.len()
    }

    /// Appends a child covering `members` (sorted) under `parent`.
    pub fn add_child(&mut self, g: &TextualAttributedGraph, parent: TreeNodeId, members: Vec<NodeIx>) -> TreeNodeId {
        let id = self.slots.len();
        let depth = self.node(parent).depth + 1;
        let volume = g.volume_of(&members);
        let cut = g.cut_of(&members);
        self.slots.push(Some(TreeNode {
            id,
            parent: Some(parent),
            children: Vec::new(),
            depth,
            members,
            volume,
            cut,
        }));
        self.node_mut(parent).children.push(id);
        id
    }

    fn shift_depths(&mut self, from: TreeNodeId, delta: isize) {
        let mut stack = vec![from];
        while let Some(id) = stack.pop() {
            let n = self.node_mut(id);
            n.depth = (n.depth as isize + delta) as usize;
            stack.extend(n.children.iter().copied());
        }
    }

    /// Removes internal node `alpha`, splicing its children into its
    /// parent's child list at `alpha`'s position.
    pub fn prune(&mut self, alpha: TreeNodeId) -> Result<(), TreeError> {
        let node = self.get(alpha)?;
        let Some(parent) = node.parent else {
            return Err(TreeError::PruneRoot);
        };
        if node.is_leaf() {
            return Err(TreeError::PruneLeaf(alpha));
        }
        let node = self.slots[alpha].take().expect("checked above");
        let siblings = &mut self.node_mut(parent).children;
        let pos = siblings.iter().position(|&c| c == alpha).expect("child link");
        siblings.splice(pos..=pos, node.children.iter().copied());
        for &c in &node.children {
            self.node_mut(c).parent = Some(parent);
            self.shift_depths(c, -1);
        }
        Ok(())
    }

    /// Inserts a pass-through node γ between `alpha` and its child `beta`;
    /// returns γ's id.
    pub fn regulate(&mut self, alpha: TreeNodeId, beta: TreeNodeId) -> Result<TreeNodeId, TreeError> {
        self.get(alpha)?;
        let b = self.get(beta)?;
        if b.parent != Some(alpha) {
            return Err(TreeError::NotParent { alpha, beta });
        }
        let gamma = self.slots.len();
        let node = TreeNode {
            id: gamma,
            parent: Some(alpha),
            children: vec![beta],
            depth: b.depth,
            members: b.members.clone(),
            volume: b.volume,
            cut: b.cut,
        };
        self.slots.push(Some(node));
        let siblings = &mut self.node_mut(alpha).children;
        let pos = siblings.iter().position(|&c| c == beta).expect("child link");
        siblings[pos] = gamma;
        self.node_mut(beta).parent = Some(gamma);
        self.shift_depths(beta, 1);
        Ok(gamma)
    }

    /// Renumbers live nodes in breadth-first order (root = 0, children in
    /// stored order) and drops holes.
    pub fn compact(&mut self) {
        let mut order = Vec::with_capacity(self.len());
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(self.node(id).children.iter().copied());
        }
        let mut remap = vec![usize::MAX; self.slots.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        let mut slots = Vec::with_capacity(order.len());
        for &old in &order {
            let mut n = self.slots[old].take().expect("live node");
            n.id = remap[old];
            n.parent = n.parent.map(|p| remap[p]);
            for c in &mut n.children {
                *c = remap[*c];
            }
            slots.push(Some(n));
        }
        self.slots = slots;
        self.root = 0;
    }

    /// Checks links, depths, the disjoint-union property and cached
    /// volume/cut values.
    pub fn validate(&self, g: &TextualAttributedGraph) -> Result<(), TreeError> {
        let invalid = |m: String| Err(TreeError::Invalid(m));
        let root = self.get(self.root)?;
        if root.parent.is_some() || root.depth != 0 {
            return invalid("root has a parent or nonzero depth".into());
        }
        if root.members.len() != g.node_count() || root.members.iter().enumerate().any(|(i, &v)| i != v) {
            return invalid("root does not cover the graph".into());
        }
        let mut seen = 0usize;
        let mut queue = VecDeque::from([self.root]);
        while let Some(id) = queue.pop_front() {
            seen += 1;
            if seen > self.slots.len() {
                return invalid("cycle detected".into());
            }
            let n = self.node(id);
            if n.members.is_empty() {
                return invalid(format!("node {id} is empty"));
            }
            if n.volume != g.volume_of(&n.members) || n.cut != g.cut_of(&n.members) {
                return invalid(format!("node {id} has stale volume/cut"));
            }
            if !n.children.is_empty() {
                let mut union: Vec<NodeIx> = Vec::with_capacity(n.members.len());
                for &c in &n.children {
                    let child = self.get(c)?;
                    if child.parent != Some(id) {
                        return invalid(format!("child {c} does not point back to {id}"));
                    }
                    if child.depth != n.depth + 1 {
                        return invalid(format!("child {c} has depth {}", child.depth));
                    }
                    union.extend_from_slice(&child.members);
                }
                union.sort_unstable();
                if union != n.members {
                    return invalid(format!("children of {id} are not a disjoint cover"));
                }
            }
            queue.extend(n.children.iter().copied());
        }
        if seen != self.len() {
            return invalid("unreachable nodes present".into());
        }
        Ok(())
    }

    /// Validity plus the regulated shape: every leaf is a singleton at
    /// depth exactly L, so every level partitions V.
    pub fn validate_regulated(&self, g: &TextualAttributedGraph) -> Result<(), TreeError> {
        self.validate(g)?;
        for id in self.leaves() {
            let n = self.node(id);
            if n.len() != 1 || n.depth != self.target_height {
                return Err(TreeError::Invalid(format!(
                    "leaf {id} has {} members at depth {} (target {})",
                    n.len(),
                    n.depth,
                    self.target_height
                )));
            }
        }
        for depth in 0..=self.target_height {
            let mut all: Vec<NodeIx> = self
                .level(depth)
                .into_iter()
                .flat_map(|id| self.node(id).members.iter().copied())
                .collect();
            all.sort_unstable();
            if all.len() != g.node_count() || all.iter().enumerate().any(|(i, &v)| i != v) {
                return Err(TreeError::Invalid(format!("level {depth} is not a partition")));
            }
        }
        Ok(())
    }

    pub fn to_file(&self, g: &TextualAttributedGraph) -> TreeFile {
        let ids = self.node_ids();
        let mut pos = vec![usize::MAX; self.slots.len()];
        for (i, &id) in ids.iter().enumerate() {
            pos[id] = i;
        }
        let nodes = ids
            .iter()
            .map(|&id| {
                let n = self.node(id);
                TreeFileNode {
                    id: pos[id],
                    parent: n.parent.map(|p| pos[p]),
                    children: n.children.iter().map(|&c| pos[c]).collect(),
                    depth: n.depth,
                    leaf_member: if n.is_leaf() && n.len() == 1 {
                        Some(g.node(n.members[0]).id.clone())
                    } else {
                        None
                    },
                    pass_through: self.is_pass_through(id),
                }
            })
            .collect();
        TreeFile {
            levels: self.target_height,
            nodes,
        }
    }

    pub fn to_json(&self, g: &TextualAttributedGraph) -> String {
        serde_json::to_string(&self.to_file(g)).expect("tree file serializes")
    }

    /// Rebuilds a tree from its file form. Internal member sets are the
    /// unions of their leaves' members.
    pub fn from_file(file: &TreeFile, g: &TextualAttributedGraph) -> Result<Self, TreeError> {
        let invalid = |m: String| TreeError::Invalid(m);
        let n = file.nodes.len();
        if n == 0 {
            return Err(invalid("no nodes".into()));
        }
        for (i, node) in file.nodes.iter().enumerate() {
            if node.id != i {
                return Err(invalid(format!("node at position {i} has id {}", node.id)));
            }
            if node.parent.is_some_and(|p| p >= n || p == i) || node.children.iter().any(|&c| c >= n) {
                return Err(invalid(format!("node {i} has an out-of-range link")));
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| file.nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(invalid(format!("expected one root, found {}", roots.len())));
        }
        let root = roots[0];
        for (i, node) in file.nodes.iter().enumerate() {
            for &c in &node.children {
                if file.nodes[c].parent != Some(i) {
                    return Err(invalid(format!("child {c} does not point back to {i}")));
                }
            }
            if let Some(p) = node.parent {
                if file.nodes[p].children.iter().filter(|&&c| c == i).count() != 1 {
                    return Err(invalid(format!("node {i} is not listed exactly once by its parent")));
                }
            }
        }
        // Breadth-first order from the root; every node must be reached once.
        let mut order = Vec::with_capacity(n);
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &c in &file.nodes[i].children {
                if visited[c] {
                    return Err(invalid(format!("node {c} reached twice")));
                }
                visited[c] = true;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(invalid("tree is not connected".into()));
        }
        let mut members: Vec<Vec<NodeIx>> = vec![Vec::new(); n];
        for &i in order.iter().rev() {
            let node = &file.nodes[i];
            if node.children.is_empty() {
                let id = node
                    .leaf_member
                    .as_deref()
                    .ok_or_else(|| invalid(format!("leaf {i} has no leaf_member")))?;
                let v = g
                    .index_of(id)
                    .ok_or_else(|| invalid(format!("leaf {i} names unknown node {id:?}")))?;
                members[i] = vec![v];
            } else {
                if node.leaf_member.is_some() {
                    return Err(invalid(format!("internal node {i} has a leaf_member")));
                }
                let mut union = Vec::new();
                for &c in &node.children {
                    union.extend_from_slice(&members[c]);
                }
                let total = union.len();
                union.sort_unstable();
                union.dedup();
                if union.len() != total {
                    return Err(invalid(format!("children of {i} overlap")));
                }
                members[i] = union;
            }
        }
        let mut slots = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        for &i in &order {
            if let Some(p) = file.nodes[i].parent {
                depth[i] = depth[p] + 1;
            }
        }
        for (i, m) in members.into_iter().enumerate() {
            let node = &file.nodes[i];
            if node.depth != depth[i] {
                return Err(invalid(format!("node {i} records depth {} but sits at {}", node.depth, depth[i])));
            }
            slots.push(Some(TreeNode {
                id: i,
                parent: node.parent,
                children: node.children.clone(),
                depth: depth[i],
                volume: g.volume_of(&m),
                cut: g.cut_of(&m),
                members: m,
            }));
        }
        let tree = EncodingTree {
            slots,
            root,
            target_height: file.levels,
        };
        for (i, node) in file.nodes.iter().enumerate() {
            if node.pass_through != tree.is_pass_through(i) {
                return Err(invalid(format!("node {i} has an inconsistent pass_through flag")));
            }
        }
        tree.validate(g)?;
        Ok(tree)
    }

    pub fn from_json(text: &str, g: &TextualAttributedGraph) -> Result<Self, TreeError> {
        let file: TreeFile = serde_json::from_str(text).map_err(|e| TreeError::Json(e.to_string()))?;
        Self::from_file(&file, g)
    }
}

/// On-disk form of a tree (`tree.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFile {
    #[serde(rename = "L")]
    pub levels: usize,
    pub nodes: Vec<TreeFileNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFileNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaf_member: Option<String>,
    pub pass_through: bool,
}

/// Entropy change caused by pruning `alpha`, computed from the terms of
/// `alpha` and its children only. `semantic` supplies H_sem for a tree node.
pub(crate) fn prune_delta_with(
    tree: &EncodingTree,
    alpha: TreeNodeId,
    model: &EntropyModel<'_>,
    semantic: &dyn Fn(TreeNodeId) -> f64,
) -> Result<f64, TreeError> {
    let a = tree.get(alpha)?;
    let Some(pid) = a.parent else {
        return Err(TreeError::PruneRoot);
    };
    if a.is_leaf() {
        return Err(TreeError::PruneLeaf(alpha));
    }
    let p = tree.node(pid);
    let lambda = model.params().lambda;
    let term = |id: TreeNodeId, parent_len: usize, parent_vol: u64| -> f64 {
        let n = tree.node(id);
        if n.len() == parent_len {
            return 0.0;
        }
        let s = model.structural(n.cut, n.volume, parent_vol);
        if lambda == 0.0 {
            s
        } else {
            s + lambda * semantic(id)
        }
    };
    let mut delta = -term(alpha, p.len(), p.volume);
    for &c in &a.children {
        delta += term(c, p.len(), p.volume) - term(c, a.len(), a.volume);
    }
    Ok(delta)
}

/// H(T after pruning `alpha`) − H(T), in O(k_α) term evaluations.
pub fn prune_delta(tree: &EncodingTree, alpha: TreeNodeId, model: &EntropyModel<'_>) -> Result<f64, TreeError> {
    prune_delta_with(tree, alpha, model, &|id| model.semantic(&tree.node(id).members))
}

pub fn prune_node(tree: &mut EncodingTree, alpha: TreeNodeId) -> Result<(), TreeError> {
    tree.prune(alpha)
}

pub fn regulate(tree: &mut EncodingTree, alpha: TreeNodeId, beta: TreeNodeId) -> Result<TreeNodeId, TreeError> {
    tree.regulate(alpha, beta)
}
