//! Dense brute-force oracles and random instance generators shared by the
//! integration tests. Nothing here calls the kernels under test.
#![allow(dead_code)]

use qa_expert::coupled::MembershipMatrix;
use qa_expert::tensor::{FactorMatrix, SparseTensor4};
use qa_expert::tree::{HierarchyTree, NodeKind, TreeBuilder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Random dims with at most `max_cells` cells.
pub fn random_dims(rng: &mut ChaCha8Rng, max_cells: usize) -> [usize; 4] {
    loop {
        let d = [0; 4].map(|_| rng.random_range(1..=5));
        if d.iter().product::<usize>() <= max_cells {
            return d;
        }
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], density: f64) -> SparseTensor4 {
    let mut entries = Vec::new();
    for c in 0..dims.iter().product::<usize>() {
        if rng.random::<f64>() < density {
            entries.push((unravel(c, dims), rng.random_range(0.1..3.0)));
        }
    }
    SparseTensor4::new(dims, entries).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, rank: usize) -> FactorMatrix {
    FactorMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_factors(rng: &mut ChaCha8Rng, dims: [usize; 4], rank: usize) -> [FactorMatrix; 4] {
    dims.map(|d| random_matrix(rng, d, rank))
}

/// Row-major (last index fastest) cell number to index.
pub fn unravel(mut c: usize, dims: [usize; 4]) -> [usize; 4] {
    let mut idx = [0; 4];
    for m in (0..4).rev() {
        idx[m] = c % dims[m];
        c /= dims[m];
    }
    idx
}

pub fn ravel(idx: [usize; 4], dims: [usize; 4]) -> usize {
    idx.iter().zip(dims).fold(0, |acc, (&i, d)| acc * d + i)
}

pub fn dense(x: &SparseTensor4) -> Vec<f64> {
    let dims = x.dims();
    let mut out = vec![0.0; dims.iter().product()];
    for (idx, v) in x.entries() {
        out[ravel(*idx, dims)] += v;
    }
    out
}

/// Dense CP reconstruction `Σ_r λ_r Π_n U_n[i_n, r]`.
pub fn dense_model(factors: &[FactorMatrix], norms: &[f64]) -> Vec<f64> {
    let dims = [0, 1, 2, 3].map(|m| factors[m].rows());
    (0..dims.iter().product::<usize>())
        .map(|c| {
            let idx = unravel(c, dims);
            (0..norms.len())
                .map(|r| norms[r] * (0..4).map(|m| factors[m].get(idx[m], r)).product::<f64>())
                .sum()
        })
        .collect()
}

/// Khatri-Rao product entry by entry: row `p * b.rows + q` is
/// `a[p] ∘ b[q]`.
pub fn oracle_khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for p in 0..a.rows() {
        for q in 0..b.rows() {
            out.push((0..a.rank()).map(|r| a.get(p, r) * b.get(q, r)).collect());
        }
    }
    out
}

/// Hadamard product of the Gram matrices of every factor except `skip`, with
/// each Gram product computed as a triple loop.
pub fn oracle_gram_hadamard(factors: &[FactorMatrix], skip: Option<usize>) -> Vec<Vec<f64>> {
    let rank = factors[0].rank();
    let mut out = vec![vec![1.0; rank]; rank];
    for (m, f) in factors.iter().enumerate() {
        if Some(m) == skip {
            continue;
        }
        for r in 0..rank {
            for s in 0..rank {
                let mut g = 0.0;
                for i in 0..f.rows() {
                    g += f.get(i, r) * f.get(i, s);
                }
                out[r][s] *= g;
            }
        }
    }
    out
}

/// Mode-`mode` unfolding of the dense tensor times the Khatri-Rao product of
/// the other factors, both materialized explicitly. Columns of the unfolding
/// enumerate the remaining modes in increasing order, last fastest.
pub fn oracle_mttkrp(x: &SparseTensor4, factors: &[FactorMatrix], mode: usize) -> Vec<Vec<f64>> {
    let dims = x.dims();
    let rank = factors[0].rank();
    let others: Vec<usize> = (0..4).filter(|&m| m != mode).collect();
    let cols: usize = others.iter().map(|&m| dims[m]).product();
    let values = dense(x);

    let mut unfolded = vec![vec![0.0; cols]; dims[mode]];
    for (c, v) in values.iter().enumerate() {
        let idx = unravel(c, dims);
        let col = others.iter().fold(0, |acc, &m| acc * dims[m] + idx[m]);
        unfolded[idx[mode]][col] = *v;
    }
    let mut kr = vec![vec![0.0; rank]; cols];
    for (col, row) in kr.iter_mut().enumerate() {
        let mut rem = col;
        let mut sub = [0; 3];
        for p in (0..3).rev() {
            sub[p] = rem % dims[others[p]];
            rem /= dims[others[p]];
        }
        for (r, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|p| factors[others[p]].get(sub[p], r)).product();
        }
    }
    unfolded
        .iter()
        .map(|urow| {
            (0..rank)
                .map(|r| urow.iter().zip(&kr).map(|(u, k)| u * k[r]).sum())
                .collect()
        })
        .collect()
}

pub fn oracle_residual(x: &SparseTensor4, factors: &[FactorMatrix], norms: &[f64]) -> f64 {
    dense(x)
        .iter()
        .zip(dense_model(factors, norms))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

pub fn frob_sq(m: &FactorMatrix) -> f64 {
    m.as_slice().iter().map(|v| v * v).sum()
}

/// Tree weights by explicit recursion: a node's weight is its `g` (1 for a
/// leaf) times the product of `s` over its ancestors.
pub fn oracle_node_weights(tree: &HierarchyTree) -> Vec<f64> {
    fn visit(tree: &HierarchyTree, id: usize, above: f64, out: &mut Vec<f64>) {
        match tree.node(id).kind {
            NodeKind::Leaf { .. } => out[id] = above,
            NodeKind::Internal { s, g } => {
                out[id] = g * above;
                for &c in &tree.node(id).children {
                    visit(tree, c, above * s, out);
                }
            }
        }
    }
    let mut out = vec![0.0; tree.nodes().len()];
    visit(tree, tree.root(), 1.0, &mut out);
    out
}

/// Leaf rows under `id`, found by walking the subtree.
pub fn oracle_group(tree: &HierarchyTree, id: usize) -> Vec<usize> {
    match tree.node(id).kind {
        NodeKind::Leaf { row } => vec![row],
        NodeKind::Internal { .. } => tree
            .node(id)
            .children
            .iter()
            .flat_map(|&c| oracle_group(tree, c))
            .collect(),
    }
}

/// `λ/2 · Σ_v ω_v Σ_{k ∈ G_v} ‖U1[k]‖²` by node-wise double sum.
pub fn oracle_weight_penalty(tree: &HierarchyTree, u1: &FactorMatrix, lambda: f64) -> f64 {
    let w = oracle_node_weights(tree);
    let mut total = 0.0;
    for id in 0..tree.nodes().len() {
        for k in oracle_group(tree, id) {
            total += w[id] * u1.row(k).iter().map(|v| v * v).sum::<f64>();
        }
    }
    0.5 * lambda * total
}

/// Random tree of depth 1 to 3 with random valid `(s, g)` and every internal
/// node holding at least one leaf.
pub fn random_tree(rng: &mut ChaCha8Rng) -> HierarchyTree {
    let mut b = TreeBuilder::new();
    let sg = |rng: &mut ChaCha8Rng| {
        let s: f64 = rng.random();
        (s, 1.0 - s)
    };
    let (s, g) = sg(rng);
    let root = b.internal(None, s, g);
    let mut row = 0;
    let depth = rng.random_range(1..=3);
    let mut frontier = vec![root];
    for _ in 1..depth {
        let mut next = Vec::new();
        for &p in &frontier {
            for _ in 0..rng.random_range(1..=3) {
                let (s, g) = sg(rng);
                next.push(b.internal(Some(p), s, g));
            }
        }
        frontier = next;
    }
    for &p in &frontier {
        for _ in 0..rng.random_range(1..=3) {
            b.leaf(Some(p), row);
            row += 1;
        }
    }
    b.build().unwrap()
}

/// Dense `½‖M − L Rᵀ‖² + λ/2 (‖L‖² + ‖R‖²)`.
pub fn oracle_matrix_objective(
    m: &MembershipMatrix,
    left: &FactorMatrix,
    right: &FactorMatrix,
    lambda: f64,
) -> f64 {
    let mut loss = 0.0;
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let target = if m.contains(i, j) { 1.0 } else { 0.0 };
            let pred: f64 = left
                .row(i)
                .iter()
                .zip(right.row(j))
                .map(|(a, b)| a * b)
                .sum();
            loss += (target - pred).powi(2);
        }
    }
    0.5 * loss + 0.5 * lambda * (frob_sq(left) + frob_sq(right))
}

/// `λ/2 Σ_j ‖S_j − mean(U1 rows under level-1 node j)‖²`.
pub fn oracle_site(s: &FactorMatrix, u1: &FactorMatrix, tree: &HierarchyTree, lambda: f64) -> f64 {
    let sites: Vec<usize> = tree
        .nodes()
        .iter()
        .filter(|n| n.level == 1)
        .map(|n| n.id)
        .collect();
    let mut total = 0.0;
    for (j, &node) in sites.iter().enumerate() {
        let rows = oracle_group(tree, node);
        for r in 0..u1.rank() {
            let mean = rows.iter().map(|&k| u1.get(k, r)).sum::<f64>() / rows.len() as f64;
            total += (s.get(j, r) - mean).powi(2);
        }
    }
    0.5 * lambda * total
}

/// A small coupled instance: `sites` subsites, each with 1-2 topic nodes of
/// 1-2 questions; random tensor and membership matrices.
pub struct Micro {
    pub x: SparseTensor4,
    pub m: MembershipMatrix,
    pub n: MembershipMatrix,
    pub tree: HierarchyTree,
}

pub fn micro_instance(rng: &mut ChaCha8Rng, sites: usize) -> Micro {
    let mut b = TreeBuilder::new();
    let root = b.internal(None, 0.5, 0.5);
    let mut row = 0;
    for _ in 0..sites {
        let site = b.internal(Some(root), 0.5, 0.5);
        for _ in 0..rng.random_range(1..=2) {
            let topic = b.internal(Some(site), 0.5, 0.5);
            for _ in 0..rng.random_range(1..=2) {
                b.leaf(Some(topic), row);
                row += 1;
            }
        }
    }
    let tree = b.build().unwrap();
    let topics = rng.random_range(1..=3);
    let users = rng.random_range(2..=4);
    let x = random_tensor(rng, [row, topics, 2, users], 0.4);
    let mut m_entries = Vec::new();
    for i in 0..sites {
        for j in 0..users {
            if rng.random::<f64>() < 0.5 {
                m_entries.push((i, j));
            }
        }
    }
    let mut n_entries = Vec::new();
    for i in 0..topics {
        for j in 0..users {
            if rng.random::<f64>() < 0.5 {
                n_entries.push((i, j));
            }
        }
    }
    Micro {
        x,
        m: MembershipMatrix::new(sites, users, m_entries).unwrap(),
        n: MembershipMatrix::new(topics, users, n_entries).unwrap(),
        tree,
    }
}

/// Dense tensor made of a planted CP model with positive factors.
pub fn planted_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4], rank: usize) -> SparseTensor4 {
    let factors = dims.map(|d| FactorMatrix::from_fn(d, rank, |_, _| rng.random_range(0.2..1.0)));
    let values = dense_model(&factors, &vec![1.0; rank]);
    SparseTensor4::new(
        dims,
        values
            .into_iter()
            .enumerate()
            .map(|(c, v)| (unravel(c, dims), v)),
    )
    .unwrap()
}
