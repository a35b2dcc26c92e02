use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::tensor::FactorMatrix;

/// Inverse of a symmetric positive semidefinite matrix: Cholesky when it is
/// positive definite, otherwise the SVD pseudo-inverse.
pub(crate) fn spd_inverse(v: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = v.clone().cholesky() {
        let inv = chol.inverse();
        if inv.iter().all(|x| x.is_finite()) {
            return inv;
        }
    }
    pseudo_inverse(v)
}

pub(crate) fn pseudo_inverse(v: &DMatrix<f64>) -> DMatrix<f64> {
    let n = v.nrows();
    let svd = v.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = max_sv * n as f64 * f64::EPSILON;
    if max_sv == 0.0 {
        return DMatrix::zeros(n, n);
    }
    svd.pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(n, n))
}

/// `rhs · V⁻¹` for symmetric `V`, row by row.
pub(crate) fn right_solve(rhs: &FactorMatrix, v: &DMatrix<f64>) -> FactorMatrix {
    let inv = spd_inverse(v);
    right_multiply(rhs, &inv)
}

pub(crate) fn right_multiply(rhs: &FactorMatrix, m: &DMatrix<f64>) -> FactorMatrix {
    let rank = m.ncols();
    FactorMatrix::from_fn(rhs.rows(), rank, |i, c| {
        rhs.row(i)
            .iter()
            .enumerate()
            .map(|(r, x)| x * m[(r, c)])
            .sum()
    })
}

pub(crate) fn add_diagonal(v: &mut DMatrix<f64>, value: f64) {
    for d in 0..v.nrows() {
        v[(d, d)] += value;
    }
}


pub(crate) fn difference(a: &[FactorMatrix], b: &[FactorMatrix]) -> Vec<FactorMatrix> {
    a.iter()
        .zip(b)
        .map(|(a, b)| {
            let mut d = a.clone();
            for (v, o) in d.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *v -= o;
            }
            d
        })
        .collect()
}

pub(crate) fn along(
    base: &[FactorMatrix],
    direction: &[FactorMatrix],
    step: f64,
) -> Vec<FactorMatrix> {
    base.iter()
        .zip(direction)
        .map(|(f, d)| {
            let mut f = f.clone();
            for (v, d) in f.as_mut_slice().iter_mut().zip(d.as_slice()) {
                *v += step * d;
            }
            f
        })
        .collect()
}

/// Minimizes `objective(base + μ·direction)` over `μ ∈ [0, reach]` for an
/// objective that is a polynomial of at most `degree` in `μ`.
///
/// The polynomial is recovered exactly from samples at `degree + 1` Chebyshev
/// nodes and then minimized on a fine grid. Returns `None` when no step is
/// predicted to beat `μ = 0`.
pub(crate) fn line_search(
    base: &[FactorMatrix],
    direction: &[FactorMatrix],
    degree: usize,
    reach: f64,
    objective: impl Fn(&[FactorMatrix]) -> Result<f64>,
) -> Result<Option<f64>> {
    const GRID: usize = 2000;
    let nodes = degree + 1;
    let to_step = |t: f64| 0.5 * (t + 1.0) * reach;
    let mut vandermonde = DMatrix::zeros(nodes, nodes);
    let mut values = DVector::zeros(nodes);
    for i in 0..nodes {
        let t = (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * nodes) as f64).cos();
        for j in 0..nodes {
            vandermonde[(i, j)] = t.powi(j as i32);
        }
        values[i] = objective(&along(base, direction, to_step(t)))?;
    }
    if !values.iter().all(|v| v.is_finite()) {
        return Ok(None);
    }
    let Some(coeffs) = vandermonde.lu().solve(&values) else {
        return Ok(None);
    };
    let poly = |t: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
    let start = poly(-1.0);
    let (best_t, best) = (1..=GRID)
        .map(|g| {
            let t = -1.0 + 2.0 * g as f64 / GRID as f64;
            (t, poly(t))
        })
        .fold((-1.0, start), |acc, p| if p.1 < acc.1 { p } else { acc });
    Ok((best < start).then(|| to_step(best_t)))
}
