//! Hierarchy tree over subsites, topics and questions, with structural node
//! weights and the squared-group-norm penalty on the question factor.
//!
//! Every node `v` owns the group of leaf rows beneath it. A node weight is
//! `g_v` for internal nodes (1 for leaves) multiplied by `s_a` over every
//! strict ancestor `a`. The penalty on `U1` is
//!
//! ```text
//! Weight(U1) = λ_W / 2 · Σ_v ω_v · Σ_{k ∈ G_v} ‖U1[k, :]‖²
//! ```
//!
//! Because the group norms are squared the penalty separates by row:
//! `Weight(U1) = λ_W / 2 · Σ_l w_l ‖U1[l, :]‖²` with `w_l` the sum of the
//! weights of every node whose group contains `l`. The ALS solver uses that
//! form to fold the penalty into a per-row Tikhonov term.

use crate::error::{Error, Result};
use crate::tensor::FactorMatrix;

const SG_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NodeKind {
    /// `s` weighs the node's children individually, `g` weighs its group.
    Internal { s: f64, g: f64 },
    /// A leaf holds one row of the question factor.
    Leaf { row: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kind: NodeKind,
}

/// Flat description of one node, as read from a tree file or built up by
/// [`TreeBuilder`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeSpec {
    pub id: usize,
    pub level: usize,
    pub parent: Option<usize>,
    pub kind: NodeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyTree {
    nodes: Vec<TreeNode>,
    groups: Vec<Vec<usize>>,
    leaf_count: usize,
}

impl HierarchyTree {
    /// Validates structure: ids are `0..n`, a single root at level 0, levels
    /// increase by one along every edge, leaves have no children, and leaf rows
    /// are exactly `0..leaf_count`, each once.
    ///
    /// `(s, g)` values are checked later by [`compute_node_weights`].
    pub fn from_specs(mut specs: Vec<NodeSpec>) -> Result<Self> {
        specs.sort_by_key(|s| s.id);
        if specs.is_empty() {
            return Err(Error::contract("tree has no nodes"));
        }
        for (pos, spec) in specs.iter().enumerate() {
            if spec.id != pos {
                return Err(Error::contract(format!(
                    "node ids must be 0..{}, found {}",
                    specs.len(),
                    spec.id
                )));
            }
        }
        let mut nodes: Vec<TreeNode> = specs
            .iter()
            .map(|s| TreeNode {
                id: s.id,
                level: s.level,
                parent: s.parent,
                children: Vec::new(),
                kind: s.kind,
            })
            .collect();

        let roots: Vec<usize> = specs
            .iter()
            .filter(|s| s.parent.is_none())
            .map(|s| s.id)
            .collect();
        if roots.len() != 1 {
            return Err(Error::contract(format!(
                "tree must have exactly one root, found {}",
                roots.len()
            )));
        }
        let root = roots[0];
        if specs[root].level != 0 {
            return Err(Error::contract("root must be at level 0"));
        }
        for spec in &specs {
            if let Some(p) = spec.parent {
                let parent = specs.get(p).ok_or_else(|| {
                    Error::contract(format!("node {} has unknown parent {p}", spec.id))
                })?;
                if matches!(parent.kind, NodeKind::Leaf { .. }) {
                    return Err(Error::contract(format!("leaf {p} cannot have children")));
                }
                if spec.level != parent.level + 1 {
                    return Err(Error::contract(format!(
                        "node {} at level {} under parent at level {}",
                        spec.id, spec.level, parent.level
                    )));
                }
                nodes[p].children.push(spec.id);
            }
        }

        // Levels strictly increase along edges, so ordering by level gives a
        // topological order; any node unreachable from the root is a cycle.
        let mut order: Vec<usize> = (0..nodes.len()).collect();
        order.sort_by_key(|&i| (nodes[i].level, i));
        let mut reached = vec![false; nodes.len()];
        reached[root] = true;
        for &i in &order {
            if let Some(p) = nodes[i].parent {
                reached[i] = reached[p];
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(Error::contract(
                "tree contains nodes unreachable from the root",
            ));
        }

        let mut leaf_rows: Vec<usize> = nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { row } => Some(row),
                NodeKind::Internal { .. } => None,
            })
            .collect();
        let leaf_count = leaf_rows.len();
        leaf_rows.sort_unstable();
        if leaf_rows.iter().enumerate().any(|(i, &r)| i != r) {
            return Err(Error::contract(
                "leaf rows must cover 0..leaf_count exactly once",
            ));
        }

        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for &i in order.iter().rev() {
            if let NodeKind::Leaf { row } = nodes[i].kind {
                groups[i].push(row);
            }
            groups[i].sort_unstable();
            if let Some(p) = nodes[i].parent {
                let child = std::mem::take(&mut groups[i]);
                groups[p].extend_from_slice(&child);
                groups[i] = child;
            }
        }

        Ok(HierarchyTree {
            nodes,
            groups,
            leaf_count,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.nodes.iter().position(|n| n.parent.is_none()).unwrap()
    }

    /// Leaf rows beneath `node`, ascending.
    pub fn group(&self, node: usize) -> &[usize] {
        &self.groups[node]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Node ids at `level`, ascending.
    pub fn level_nodes(&self, level: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.level == level)
            .map(|n| n.id)
            .collect()
    }

    pub fn specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                level: n.level,
                parent: n.parent,
                kind: n.kind,
            })
            .collect()
    }
}

/// Incremental construction with ids assigned in insertion order.
#[derive(Default, Debug)]
pub struct TreeBuilder {
    specs: Vec<NodeSpec>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn level_under(&self, parent: Option<usize>) -> usize {
        parent.map_or(0, |p| self.specs[p].level + 1)
    }

    pub fn internal(&mut self, parent: Option<usize>, s: f64, g: f64) -> usize {
        let id = self.specs.len();
        let level = self.level_under(parent);
        self.specs.push(NodeSpec {
            id,
            level,
            parent,
            kind: NodeKind::Internal { s, g },
        });
        id
    }

    pub fn leaf(&mut self, parent: Option<usize>, row: usize) -> usize {
        let id = self.specs.len();
        let level = self.level_under(parent);
        self.specs.push(NodeSpec {
            id,
            level,
            parent,
            kind: NodeKind::Leaf { row },
        });
        id
    }

    pub fn build(self) -> Result<HierarchyTree> {
        HierarchyTree::from_specs(self.specs)
    }
}

/// Structural weight of every node, indexed by node id.
pub fn compute_node_weights(tree: &HierarchyTree) -> Result<Vec<f64>> {
    for node in tree.nodes() {
        if let NodeKind::Internal { s, g } = node.kind {
            let in_range = (0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&g);
            if !in_range || (s + g - 1.0).abs() > SG_TOLERANCE {
                return Err(Error::contract(format!(
                    "node {} has invalid (s, g) = ({s}, {g}); both must lie in [0, 1] and sum to 1",
                    node.id
                )));
            }
        }
    }
    let mut weights = vec![0.0; tree.nodes().len()];
    let mut stack = vec![(tree.root(), 1.0)];
    while let Some((id, ancestor_s)) = stack.pop() {
        let node = tree.node(id);
        match node.kind {
            NodeKind::Leaf { .. } => weights[id] = ancestor_s,
            NodeKind::Internal { s, g } => {
                weights[id] = g * ancestor_s;
                stack.extend(node.children.iter().map(|&c| (c, ancestor_s * s)));
            }
        }
    }
    Ok(weights)
}

/// A tree with its regularization strength and precomputed weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TreePenalty {
    tree: HierarchyTree,
    lambda_w: f64,
    node_weights: Vec<f64>,
    row_weights: Vec<f64>,
}

impl TreePenalty {
    pub fn new(tree: HierarchyTree, lambda_w: f64) -> Result<Self> {
        if !(lambda_w >= 0.0 && lambda_w.is_finite()) {
            return Err(Error::contract(format!(
                "lambda_w must be finite and >= 0, got {lambda_w}"
            )));
        }
        let node_weights = compute_node_weights(&tree)?;
        let mut row_weights = vec![0.0; tree.leaf_count()];
        for (id, w) in node_weights.iter().enumerate() {
            for &row in tree.group(id) {
                row_weights[row] += w;
            }
        }
        Ok(TreePenalty {
            tree,
            lambda_w,
            node_weights,
            row_weights,
        })
    }

    pub fn tree(&self) -> &HierarchyTree {
        &self.tree
    }

    pub fn lambda_w(&self) -> f64 {
        self.lambda_w
    }

    pub fn node_weights(&self) -> &[f64] {
        &self.node_weights
    }

    fn check_rows(&self, u1: &FactorMatrix) -> Result<()> {
        if u1.rows() != self.tree.leaf_count() {
            return Err(Error::contract(format!(
                "question factor has {} rows but the tree has {} leaves",
                u1.rows(),
                self.tree.leaf_count()
            )));
        }
        Ok(())
    }
}

/// `λ_W / 2 · Σ_v ω_v · Σ_{k ∈ G_v} ‖U1[k, :]‖²`, summed node by node.
pub fn weight_penalty(u1: &FactorMatrix, penalty: &TreePenalty) -> Result<f64> {
    penalty.check_rows(u1)?;
    let row_sq: Vec<f64> = (0..u1.rows())
        .map(|k| u1.row(k).iter().map(|v| v * v).sum())
        .collect();
    let total: f64 = penalty
        .node_weights
        .iter()
        .enumerate()
        .map(|(id, w)| {
            w * penalty
                .tree
                .group(id)
                .iter()
                .map(|&k| row_sq[k])
                .sum::<f64>()
        })
        .sum();
    Ok(0.5 * penalty.lambda_w * total)
}

/// Per-row weights `w_l` of the row-separable form of the penalty.
pub fn row_regularizer_weights(penalty: &TreePenalty) -> &[f64] {
    &penalty.row_weights
}
