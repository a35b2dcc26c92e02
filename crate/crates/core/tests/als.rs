mod common;

use common::*;
use qa_expert::als::{cp_als, fit_metric, AlsConfig, CpModel};
use qa_expert::tensor::SparseTensor4;
use qa_expert::tree::TreePenalty;
use rand::Rng;

/// `½‖X − X̂‖² + λ/2 Σ‖U_n‖²` from the dense reconstruction.
fn oracle_objective(x: &SparseTensor4, model: &CpModel, lambda: f64) -> f64 {
    let working = model.working_factors();
    let r = oracle_residual(x, &working, &vec![1.0; model.rank()]);
    0.5 * r * r + 0.5 * lambda * working.iter().map(frob_sq).sum::<f64>()
}

fn recovery_successes(rank: usize) -> usize {
    (0..10)
        .filter(|&seed| {
            let mut r = rng(100 + seed);
            let dims = [0; 4].map(|_| r.random_range(2..=6));
            let x = planted_tensor(&mut r, dims, rank);
            let config = AlsConfig {
                rank,
                max_iters: 200,
                fit_tolerance: 1e-10,
                lambda_x: 0.0,
                seed,
                accelerate: true,
            };
            let model = cp_als(&x, &config, None).unwrap();
            fit_metric(&x, &model).unwrap() >= 0.999
        })
        .count()
}

#[test]
fn recovers_rank_one() {
    assert!(recovery_successes(1) >= 9);
}

#[test]
fn recovers_rank_three() {
    assert!(recovery_successes(3) >= 9);
}

#[test]
fn objective_is_non_increasing_per_sweep() {
    let mut r = rng(200);
    for case in 0..50 {
        let dims = random_dims(&mut r, 200);
        let x = random_tensor(&mut r, dims, 0.5);
        let rank = r.random_range(1..=3);
        let lambda = r.random_range(0.01..1.0);
        let mut previous = f64::INFINITY;
        for sweeps in 1..=8 {
            let config = AlsConfig {
                rank,
                max_iters: sweeps,
                fit_tolerance: 0.0,
                lambda_x: lambda,
                seed: case,
                ..AlsConfig::default()
            };
            let model = cp_als(&x, &config, None).unwrap();
            let value = oracle_objective(&x, &model, lambda);
            assert!(
                value <= previous + 1e-9,
                "case {case} sweep {sweeps}: {value} > {previous}"
            );
            previous = value;
        }
    }
}

#[test]
fn objective_with_tree_penalty_is_non_increasing() {
    let mut r = rng(201);
    for case in 0..20 {
        let tree = random_tree(&mut r);
        let dims = [
            tree.leaf_count(),
            r.random_range(1..=3),
            2,
            r.random_range(1..=3),
        ];
        let x = random_tensor(&mut r, dims, 0.5);
        let penalty = TreePenalty::new(tree.clone(), 0.3).unwrap();
        let config = AlsConfig {
            rank: 2,
            max_iters: 30,
            fit_tolerance: 0.0,
            lambda_x: 0.1,
            seed: case,
            ..AlsConfig::default()
        };
        let model = cp_als(&x, &config, Some(&penalty)).unwrap();
        let h = &model.objective_history;
        for w in h.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "case {case}: {w:?}");
        }
        let last = oracle_objective(&x, &model, 0.1)
            + oracle_weight_penalty(&tree, &model.working_factors()[0], 0.3);
        assert!(rel_err(*h.last().unwrap(), last) <= 1e-10);
    }
}

#[test]
fn columns_are_unit_norm_and_reconstruction_is_consistent() {
    let mut r = rng(202);
    for case in 0..20 {
        let dims = random_dims(&mut r, 200);
        let x = random_tensor(&mut r, dims, 0.6);
        let config = AlsConfig {
            rank: 2,
            seed: case,
            ..AlsConfig::default()
        };
        let model = cp_als(&x, &config, None).unwrap();
        for f in model.factors() {
            for c in 0..f.rank() {
                let n = f.column_norm(c);
                assert!(n == 0.0 || (n - 1.0).abs() <= 1e-12, "norm {n}");
            }
        }
        assert!(model.norms().iter().all(|&n| n >= 0.0));
        let working = dense_model(&model.working_factors(), &[1.0, 1.0]);
        for (c, w) in working.iter().enumerate() {
            let p = model.predict(unravel(c, dims)).unwrap();
            assert!((p - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}

#[test]
fn singular_gram_still_gives_finite_factors() {
    // Rank 4 on a tensor with one-element modes makes every Gram product
    // rank deficient.
    let x = SparseTensor4::new([1, 1, 2, 2], [([0, 0, 0, 0], 1.0), ([0, 0, 1, 1], 2.0)]).unwrap();
    let config = AlsConfig {
        rank: 4,
        lambda_x: 0.0,
        max_iters: 20,
        ..AlsConfig::default()
    };
    let model = cp_als(&x, &config, None).unwrap();
    assert!(model.factors().iter().all(|f| f.is_finite()));
    assert!(model.norms().iter().all(|n| n.is_finite()));
    assert!(!model.warnings.is_empty());
}

#[test]
fn same_seed_same_model() {
    let mut r = rng(203);
    let x = random_tensor(&mut r, [4, 3, 2, 3], 0.5);
    let config = AlsConfig {
        rank: 3,
        seed: 9,
        ..AlsConfig::default()
    };
    assert_eq!(
        cp_als(&x, &config, None).unwrap(),
        cp_als(&x, &config, None).unwrap()
    );
}
