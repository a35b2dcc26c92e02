//! Sparse fourth-order tensor storage and the multilinear kernels used by
//! CP-ALS: Khatri–Rao product, Gram–Hadamard product, MTTKRP, entry
//! reconstruction and the residual norm.
//!
//! Mode order is fixed: 0 = question, 1 = topic, 2 = voting bucket,
//! 3 = expert (answerer). Unfoldings follow the usual convention where the
//! lowest remaining mode varies fastest, so the mode-`n` MTTKRP pairs with
//! the chain `A(3) ⊙ … ⊙ A(n+1) ⊙ A(n-1) ⊙ … ⊙ A(0)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of tensor modes.
pub const ORDER: usize = 4;

/// A coordinate `(i, j, k, l)` into a [`SparseTensor4`].
pub type Index4 = [usize; ORDER];

/// Dense row-major `rows × rank` matrix holding one factor of a CP model.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    rank: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, rank: usize) -> Self {
        FactorMatrix {
            rows,
            rank,
            data: vec![0.0; rows * rank],
        }
    }

    pub fn from_fn(rows: usize, rank: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * rank);
        for i in 0..rows {
            for r in 0..rank {
                data.push(f(i, r));
            }
        }
        FactorMatrix { rows, rank, data }
    }

    /// Builds a factor from row-major data.
    pub fn from_row_major(rows: usize, rank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * rank {
            return Err(Error::contract(format!(
                "factor data has {} values, expected {rows}x{rank}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::contract(format!("factor value {bad} is not finite")));
        }
        Ok(FactorMatrix { rows, rank, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rank = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != rank) {
            return Err(Error::contract("ragged factor rows"));
        }
        Self::from_row_major(rows.len(), rank, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.data[i * self.rank + r]
    }

    pub fn set(&mut self, i: usize, r: usize, value: f64) {
        self.data[i * self.rank + r] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.rank..(i + 1) * self.rank]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column_norm(&self, r: usize) -> f64 {
        (0..self.rows)
            .map(|i| self.get(i, r).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_column(&mut self, r: usize, factor: f64) {
        for i in 0..self.rows {
            self.data[i * self.rank + r] *= factor;
        }
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `AᵀA`, an `R × R` matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.rank, self.rank);
        for i in 0..self.rows {
            let row = self.row(i);
            for p in 0..self.rank {
                for q in p..self.rank {
                    g[(p, q)] += row[p] * row[q];
                }
            }
        }
        for p in 0..self.rank {
            for q in 0..p {
                g[(p, q)] = g[(q, p)];
            }
        }
        g
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.rank, &self.data)
    }

    pub fn from_dmatrix(m: &DMatrix<f64>) -> Self {
        FactorMatrix::from_fn(m.nrows(), m.ncols(), |i, r| m[(i, r)])
    }
}

/// Columnwise Kronecker product. Row `p * b.rows + q` of column `r` is
/// `a[p, r] * b[q, r]`.
pub fn khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Result<FactorMatrix> {
    if a.rank != b.rank {
        return Err(Error::contract(format!(
            "khatri_rao rank mismatch: {} vs {}",
            a.rank, b.rank
        )));
    }
    let rank = a.rank;
    let mut out = FactorMatrix::zeros(a.rows * b.rows, rank);
    for p in 0..a.rows {
        for q in 0..b.rows {
            let dst = out.row_mut(p * b.rows + q);
            for r in 0..rank {
                dst[r] = a.get(p, r) * b.get(q, r);
            }
        }
    }
    Ok(out)
}

fn common_rank(factors: &[FactorMatrix]) -> Result<usize> {
    let rank = factors
        .first()
        .map(FactorMatrix::rank)
        .ok_or_else(|| Error::contract("no factors given"))?;
    if let Some(f) = factors.iter().find(|f| f.rank != rank) {
        return Err(Error::contract(format!(
            "factor rank mismatch: {} vs {rank}",
            f.rank
        )));
    }
    Ok(rank)
}

/// Hadamard product of the Gram matrices `AᵀA` of every factor except
/// `skip_mode`. Pass `None` to include every mode.
pub fn gram_hadamard(factors: &[FactorMatrix], skip_mode: Option<usize>) -> Result<DMatrix<f64>> {
    let rank = common_rank(factors)?;
    if let Some(m) = skip_mode {
        if m >= factors.len() {
            return Err(Error::contract(format!(
                "skip mode {m} out of range for {} factors",
                factors.len()
            )));
        }
    }
    let mut v = DMatrix::from_element(rank, rank, 1.0);
    for (n, f) in factors.iter().enumerate() {
        if Some(n) != skip_mode {
            v.component_mul_assign(&f.gram());
        }
    }
    Ok(v)
}

/// Sparse COO tensor of shape `I × J × K × L` with nonnegative values.
///
/// Entries are kept sorted lexicographically by coordinate. Duplicate
/// coordinates supplied at construction are summed and explicit zeros are
/// dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor4 {
    dims: [usize; ORDER],
    indices: Vec<Index4>,
    values: Vec<f64>,
}

impl SparseTensor4 {
    pub fn new(
        dims: [usize; ORDER],
        entries: impl IntoIterator<Item = (Index4, f64)>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!(
                "tensor dims must be positive, got {dims:?}"
            )));
        }
        let mut raw: Vec<(Index4, f64)> = Vec::new();
        for (idx, v) in entries {
            if idx.iter().zip(&dims).any(|(i, d)| i >= d) {
                return Err(Error::contract(format!(
                    "index {idx:?} out of range for dims {dims:?}"
                )));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::contract(format!(
                    "tensor value {v} at {idx:?} must be finite and nonnegative"
                )));
            }
            raw.push((idx, v));
        }
        raw.sort_by_key(|e| e.0);

        let mut indices: Vec<Index4> = Vec::with_capacity(raw.len());
        let mut values: Vec<f64> = Vec::with_capacity(raw.len());
        for (idx, v) in raw {
            match indices.last() {
                Some(last) if *last == idx => *values.last_mut().unwrap() += v,
                _ => {
                    indices.push(idx);
                    values.push(v);
                }
            }
        }
        let (indices, values) = indices
            .into_iter()
            .zip(values)
            .filter(|(_, v)| *v != 0.0)
            .unzip();
        Ok(SparseTensor4 {
            dims,
            indices,
            values,
        })
    }

    pub fn zeros(dims: [usize; ORDER]) -> Result<Self> {
        Self::new(dims, std::iter::empty())
    }

    pub fn dims(&self) -> [usize; ORDER] {
        self.dims
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Index4, f64)> + '_ {
        self.indices.iter().zip(self.values.iter().copied())
    }

    /// Total number of cells, or `None` on overflow.
    pub fn total_cells(&self) -> Option<u128> {
        self.dims
            .iter()
            .try_fold(1u128, |acc, &d| acc.checked_mul(d as u128))
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Checks that `factors` are four matrices matching the tensor dims and
    /// sharing a rank, returning that rank.
    pub fn check_factors(&self, factors: &[FactorMatrix]) -> Result<usize> {
        if factors.len() != ORDER {
            return Err(Error::contract(format!(
                "expected {ORDER} factors, got {}",
                factors.len()
            )));
        }
        let rank = common_rank(factors)?;
        for (n, (f, d)) in factors.iter().zip(&self.dims).enumerate() {
            if f.rows != *d {
                return Err(Error::contract(format!(
                    "factor {n} has {} rows but tensor mode {n} has size {d}",
                    f.rows
                )));
            }
        }
        Ok(rank)
    }
}

/// Matricized tensor times Khatri–Rao product for `mode`, evaluated over the
/// nonzeros only.
pub fn mttkrp(x: &SparseTensor4, factors: &[FactorMatrix], mode: usize) -> Result<FactorMatrix> {
    let rank = x.check_factors(factors)?;
    if mode >= ORDER {
        return Err(Error::contract(format!("mode {mode} out of range")));
    }
    let mut out = FactorMatrix::zeros(x.dims[mode], rank);
    let mut scratch = vec![0.0; rank];
    for (idx, v) in x.entries() {
        scratch.fill(v);
        for (n, f) in factors.iter().enumerate() {
            if n != mode {
                for (s, a) in scratch.iter_mut().zip(f.row(idx[n])) {
                    *s *= a;
                }
            }
        }
        for (o, s) in out.row_mut(idx[mode]).iter_mut().zip(&scratch) {
            *o += s;
        }
    }
    Ok(out)
}

/// `Σ_r λ_r · U1[i,r] · U2[j,r] · U3[k,r] · U4[l,r]`.
pub fn reconstruct_entry(factors: &[FactorMatrix], norms: &[f64], index: Index4) -> Result<f64> {
    if factors.len() != ORDER {
        return Err(Error::contract(format!("expected {ORDER} factors")));
    }
    let rank = common_rank(factors)?;
    if norms.len() != rank {
        return Err(Error::contract(format!(
            "norms length {} does not match rank {rank}",
            norms.len()
        )));
    }
    for (n, (f, &i)) in factors.iter().zip(&index).enumerate() {
        if i >= f.rows {
            return Err(Error::contract(format!(
                "index {i} out of range for mode {n} of size {}",
                f.rows
            )));
        }
    }
    Ok(entry_unchecked(factors, norms, &index))
}

fn entry_unchecked(factors: &[FactorMatrix], norms: &[f64], index: &Index4) -> f64 {
    (0..norms.len())
        .map(|r| {
            norms[r]
                * factors[0].get(index[0], r)
                * factors[1].get(index[1], r)
                * factors[2].get(index[2], r)
                * factors[3].get(index[3], r)
        })
        .sum()
}

/// Squared Frobenius norm of the full reconstruction, `λᵀ (⊛ AᵀA) λ`.
pub fn model_norm_sq(factors: &[FactorMatrix], norms: &[f64]) -> Result<f64> {
    let v = gram_hadamard(factors, None)?;
    if norms.len() != v.nrows() {
        return Err(Error::contract("norms length does not match rank"));
    }
    let lam = nalgebra::DVector::from_column_slice(norms);
    Ok(lam.dot(&(&v * &lam)))
}

/// Frobenius norm of `X − ⟦λ; U1, U2, U3, U4⟧` over the full index space.
///
/// Nonzero cells are summed directly. The model mass on zero cells is
/// enumerated cell by cell when there are no more zero cells than nonzeros,
/// otherwise it comes from `‖X̂‖² − Σ_nz x̂²`. The enumerated path avoids the
/// cancellation that the expansion suffers near an exact fit.
pub fn residual_norm(x: &SparseTensor4, factors: &[FactorMatrix], norms: &[f64]) -> Result<f64> {
    let rank = x.check_factors(factors)?;
    if norms.len() != rank {
        return Err(Error::contract(format!(
            "norms length {} does not match rank {rank}",
            norms.len()
        )));
    }
    let mut on_nonzeros = 0.0;
    let mut model_on_nonzeros = 0.0;
    for (idx, v) in x.entries() {
        let xh = entry_unchecked(factors, norms, idx);
        on_nonzeros += (v - xh) * (v - xh);
        model_on_nonzeros += xh * xh;
    }

    let zero_cells = x.total_cells().map(|t| t - x.nnz() as u128);
    let off_support = match zero_cells {
        Some(z) if z <= x.nnz() as u128 => zero_cell_mass(x, factors, norms),
        _ => (model_norm_sq(factors, norms)? - model_on_nonzeros).max(0.0),
    };
    Ok((on_nonzeros + off_support).sqrt())
}

fn zero_cell_mass(x: &SparseTensor4, factors: &[FactorMatrix], norms: &[f64]) -> f64 {
    let [di, dj, dk, dl] = x.dims;
    let mut nz = x.indices.iter().peekable();
    let mut mass = 0.0;
    for i in 0..di {
        for j in 0..dj {
            for k in 0..dk {
                for l in 0..dl {
                    let idx = [i, j, k, l];
                    if nz.peek() == Some(&&idx) {
                        nz.next();
                        continue;
                    }
                    let xh = entry_unchecked(factors, norms, &idx);
                    mass += xh * xh;
                }
            }
        }
    }
    mass
}
