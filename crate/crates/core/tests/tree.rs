mod common;

use common::*;
use proptest::prelude::*;
use qa_expert::tensor::FactorMatrix;
use qa_expert::tree::{
    compute_node_weights, row_regularizer_weights, weight_penalty, HierarchyTree, NodeKind,
    NodeSpec, TreeBuilder, TreePenalty,
};
use rand::Rng;

fn rowwise(penalty: &TreePenalty, u1: &FactorMatrix) -> f64 {
    let w = row_regularizer_weights(penalty);
    0.5 * penalty.lambda_w()
        * (0..u1.rows())
            .map(|l| w[l] * u1.row(l).iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
}

#[test]
fn penalty_equals_rowwise_decomposition() {
    let mut r = rng(300);
    for _ in 0..100 {
        let tree = random_tree(&mut r);
        let lambda = r.random_range(0.0..2.0);
        let rank = r.random_range(1..=4);
        let u1 = random_matrix(&mut r, tree.leaf_count(), rank);
        let p = TreePenalty::new(tree.clone(), lambda).unwrap();
        let got = weight_penalty(&u1, &p).unwrap();
        assert!((got - rowwise(&p, &u1)).abs() <= 1e-12 * (1.0 + got));
        assert!((got - oracle_weight_penalty(&tree, &u1, lambda)).abs() <= 1e-12 * (1.0 + got));
    }
}

#[test]
fn node_weights_match_recursion() {
    let mut r = rng(301);
    for _ in 0..100 {
        let tree = random_tree(&mut r);
        let got = compute_node_weights(&tree).unwrap();
        let want = oracle_node_weights(&tree);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-15);
            assert!(*g >= 0.0);
        }
    }
}

#[test]
fn three_level_half_half_weights() {
    let mut b = TreeBuilder::new();
    let root = b.internal(None, 0.5, 0.5);
    let mid = b.internal(Some(root), 0.5, 0.5);
    let leaf = b.leaf(Some(mid), 0);
    let w = compute_node_weights(&b.build().unwrap()).unwrap();
    assert_eq!(w[root], 0.5);
    assert_eq!(w[mid], 0.25);
    assert_eq!(w[leaf], 0.25);
}

#[test]
fn single_leaf_tree_is_plain_ridge() {
    let mut b = TreeBuilder::new();
    b.leaf(None, 0);
    let p = TreePenalty::new(b.build().unwrap(), 0.7).unwrap();
    let u1 = FactorMatrix::from_rows(&[vec![1.0, -2.0, 3.0]]).unwrap();
    assert!((weight_penalty(&u1, &p).unwrap() - 0.5 * 0.7 * 14.0).abs() < 1e-15);
}

#[test]
fn groups_are_nested_and_leaves_unique() {
    let mut r = rng(302);
    for _ in 0..50 {
        let tree = random_tree(&mut r);
        for node in tree.nodes() {
            let g = tree.group(node.id);
            let mut want = oracle_group(&tree, node.id);
            want.sort_unstable();
            assert_eq!(g, want.as_slice());
            if let Some(p) = node.parent {
                assert!(g.iter().all(|k| tree.group(p).contains(k)));
            }
            if let NodeKind::Internal { s, g } = node.kind {
                assert!((s + g - 1.0).abs() < 1e-12);
            }
        }
        let mut rows: Vec<usize> = tree
            .nodes()
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Leaf { row } => Some(row),
                _ => None,
            })
            .collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..tree.leaf_count()).collect::<Vec<_>>());
    }
}

#[test]
fn invalid_sg_is_rejected() {
    let mut b = TreeBuilder::new();
    let root = b.internal(None, 0.6, 0.6);
    b.leaf(Some(root), 0);
    let tree = b.build().unwrap();
    assert!(compute_node_weights(&tree).is_err());
    assert!(TreePenalty::new(tree, 1.0).is_err());
}

#[test]
fn extra_leaf_never_lowers_penalty() {
    // Appending a leaf leaves every existing node weight unchanged and adds
    // one positive-weight node, so the penalty grows by the new row's share.
    let mut r = rng(303);
    for _ in 0..50 {
        let tree = random_tree(&mut r);
        let internal: Vec<usize> = tree
            .nodes()
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Internal { .. }))
            .map(|n| n.id)
            .collect();
        let parent = internal[r.random_range(0..internal.len())];
        let mut specs = tree.specs();
        specs.push(NodeSpec {
            id: specs.len(),
            level: tree.node(parent).level + 1,
            parent: Some(parent),
            kind: NodeKind::Leaf {
                row: tree.leaf_count(),
            },
        });
        let bigger = HierarchyTree::from_specs(specs).unwrap();

        let u1 = random_matrix(&mut r, tree.leaf_count(), 2);
        let extra = random_matrix(&mut r, 1, 2);
        let mut rows: Vec<Vec<f64>> = (0..u1.rows()).map(|i| u1.row(i).to_vec()).collect();
        rows.push(extra.row(0).to_vec());
        let u1_big = FactorMatrix::from_rows(&rows).unwrap();

        let before = weight_penalty(&u1, &TreePenalty::new(tree, 1.0).unwrap()).unwrap();
        let after = weight_penalty(&u1_big, &TreePenalty::new(bigger, 1.0).unwrap()).unwrap();
        assert!(after + 1e-12 >= before);
    }
}

proptest! {
    #[test]
    fn penalty_scales_quadratically(seed in 0u64..5000, c in -5.0f64..5.0) {
        let mut r = rng(seed);
        let tree = random_tree(&mut r);
        let u1 = random_matrix(&mut r, tree.leaf_count(), 3);
        let p = TreePenalty::new(tree, 0.4).unwrap();
        let scaled = FactorMatrix::from_fn(u1.rows(), u1.rank(), |i, k| c * u1.get(i, k));
        let base = weight_penalty(&u1, &p).unwrap();
        prop_assert!((weight_penalty(&scaled, &p).unwrap() - c * c * base).abs() <= 1e-12 * (1.0 + c * c * base));
    }

    #[test]
    fn rowwise_identity_holds(seed in 0u64..5000, lambda in 0.0f64..3.0) {
        let mut r = rng(seed);
        let tree = random_tree(&mut r);
        let u1 = random_matrix(&mut r, tree.leaf_count(), 2);
        let p = TreePenalty::new(tree, lambda).unwrap();
        let got = weight_penalty(&u1, &p).unwrap();
        prop_assert!((got - rowwise(&p, &u1)).abs() <= 1e-12 * (1.0 + got));
    }
}
