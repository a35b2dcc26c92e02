//! Python bindings: CP-ALS fitting, reputation scoring over dump documents
//! and the ranking metrics.

use std::collections::BTreeSet;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use qa_expert::als::{
    cp_als, AlsConfig, DEFAULT_FIT_TOLERANCE, DEFAULT_LAMBDA_X, DEFAULT_MAX_ITERS,
};
use qa_expert::eval::{self, RankStatus, RankedList};
use qa_expert::ingest::{parse_dump_str, reputation_scores, UserId};
use qa_expert::tensor::{Index4, SparseTensor4};
use qa_expert::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Contract(_) | Error::Format { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// A fitted CP model: unit-norm factor columns and their norms.
#[pyclass(frozen, get_all)]
struct CpFit {
    /// One `rows x rank` matrix per mode, as nested lists.
    factors: Vec<Vec<Vec<f64>>>,
    norms: Vec<f64>,
    fit_history: Vec<f64>,
    objective_history: Vec<f64>,
}

/// Fits a rank-`rank` CP model to a sparse 4-way tensor given as
/// `[((i, j, k, l), value), ...]`.
#[pyfunction]
#[pyo3(signature = (entries, dims, rank, lambda_x = DEFAULT_LAMBDA_X, max_iters = DEFAULT_MAX_ITERS, tol = DEFAULT_FIT_TOLERANCE, seed = 0))]
fn fit_cp(
    entries: Vec<(Index4, f64)>,
    dims: [usize; 4],
    rank: usize,
    lambda_x: f64,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> PyResult<CpFit> {
    let x = SparseTensor4::new(dims, entries).map_err(to_py)?;
    let config = AlsConfig {
        rank,
        max_iters,
        fit_tolerance: tol,
        lambda_x,
        seed,
        ..AlsConfig::default()
    };
    let model = cp_als(&x, &config, None).map_err(to_py)?;
    Ok(CpFit {
        factors: model
            .factors()
            .iter()
            .map(|f| (0..f.rows()).map(|i| f.row(i).to_vec()).collect())
            .collect(),
        norms: model.norms().to_vec(),
        fit_history: model.fit_history.clone(),
        objective_history: model.objective_history.clone(),
    })
}

/// Per-topic reputation from the text of one subsite's Posts, Votes and Users
/// documents, as `(user_id, "subsite/tag", score)` triples.
#[pyfunction]
fn reputation(
    posts: &str,
    votes: &str,
    users: &str,
    subsite: &str,
) -> PyResult<Vec<(i64, String, i64)>> {
    let data = parse_dump_str(posts, votes, users, subsite).map_err(to_py)?;
    Ok(reputation_scores(&data)
        .iter()
        .map(|(u, topic, score)| (u.0, topic.to_string(), score))
        .collect())
}

/// Share of the first `k` recommended users that are relevant.
#[pyfunction]
fn precision_at_k(recommended: Vec<i64>, relevant: Vec<i64>, k: usize) -> PyResult<f64> {
    let list = RankedList {
        topic: 0,
        entries: recommended.into_iter().map(|u| (UserId(u), 0.0)).collect(),
        status: RankStatus::Ranked,
    };
    let relevant: BTreeSet<UserId> = relevant.into_iter().map(UserId).collect();
    eval::precision_at_k(&list, &relevant, k).map_err(to_py)
}

/// Mean of `1/rank` over 1-based ranks.
#[pyfunction]
fn mean_reciprocal_rank(ranks: Vec<usize>) -> PyResult<f64> {
    eval::mean_reciprocal_rank(&ranks).map_err(to_py)
}

#[pyfunction]
fn z_score(answers: i64, questions: i64) -> PyResult<f64> {
    eval::z_score(answers, questions).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "qa_expert")]
fn qa_expert_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<CpFit>()?;
    m.add_function(wrap_pyfunction!(fit_cp, m)?)?;
    m.add_function(wrap_pyfunction!(reputation, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mean_reciprocal_rank, m)?)?;
    m.add_function(wrap_pyfunction!(z_score, m)?)?;
    Ok(())
}
