//! Regularized CP-ALS.
//!
//! Each sweep updates the four factors in mode order. Mode `n` solves the
//! ridge normal equations
//!
//! ```text
//! U_n ← MTTKRP_n(X) · (V_n + λ_X I)⁻¹,   V_n = ⊛_{m ≠ n} U_mᵀ U_m
//! ```
//!
//! falling back to the pseudo-inverse when the system is singular. With a
//! tree penalty attached, row `l` of the question factor instead uses
//! `V_0 + (λ_X + λ_W w_l) I`, which is the exact minimizer because the
//! penalty is a sum of weighted squared row norms.
//!
//! After every sweep the column scales are redistributed across modes to the
//! split that minimizes the ridge terms for the same reconstruction, so the
//! objective never increases from one sweep to the next. Stored models keep
//! unit-norm columns with the products of the scales in `norms`.
//!
//! With `accelerate` on, two safeguarded steps are layered on the sweeps.
//! The sweep starts from the momentum point `U + β (U − U_prev)` with
//! `β = m / (m + 3)`, `m` counting consecutive successes; when that result
//! does not lower the objective, the sweep is redone from `U` and `m` resets.
//! The sweep's step is then extended by an exact line search: along a line
//! the objective is a degree-8 polynomial, recovered from 9 samples. Both
//! steps are kept only when they lower the objective, so the per-sweep
//! objective stays non-increasing.
//!
//! Cost per sweep is `O(nnz · N · R + Σ I_n R² + R³)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, along, difference, line_search, right_solve, spd_inverse};
use crate::tensor::{
    gram_hadamard, mttkrp, reconstruct_entry, residual_norm, FactorMatrix, Index4, SparseTensor4,
    ORDER,
};
use crate::tree::{row_regularizer_weights, weight_penalty, TreePenalty};

pub const DEFAULT_LAMBDA_X: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 200;
pub const DEFAULT_FIT_TOLERANCE: f64 = 1e-6;
pub(crate) const LINE_SEARCH_REACH: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct AlsConfig {
    pub rank: usize,
    pub max_iters: usize,
    /// Stop once a sweep improves the fit by less than this.
    pub fit_tolerance: f64,
    pub lambda_x: f64,
    pub seed: u64,
    /// Momentum and an exact line search on top of plain ALS; each step is
    /// kept only when it lowers the objective.
    pub accelerate: bool,
}

impl Default for AlsConfig {
    fn default() -> Self {
        AlsConfig {
            rank: 8,
            max_iters: DEFAULT_MAX_ITERS,
            fit_tolerance: DEFAULT_FIT_TOLERANCE,
            lambda_x: DEFAULT_LAMBDA_X,
            seed: 0,
            accelerate: true,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::contract("rank must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::contract("max_iters must be at least 1"));
        }
        if !(self.fit_tolerance >= 0.0) {
            return Err(Error::contract("fit_tolerance must be >= 0"));
        }
        if !(self.lambda_x >= 0.0 && self.lambda_x.is_finite()) {
            return Err(Error::contract("lambda_x must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FitWarning {
    /// The requested rank exceeds the size of a tensor mode.
    RankExceedsDimension {
        mode: usize,
        size: usize,
        rank: usize,
    },
}

/// A fitted CP model.
///
/// `factors` have unit-norm columns (columns that collapsed to zero stay
/// zero, with a zero norm). `scales[n][r]` is the norm column `r` of mode `n`
/// had in the working factors, and `norms[r]` is the product of the four
/// scales. [`CpModel::working_factors`] restores the working factors, which
/// is what the regularizers are evaluated on.
#[derive(Clone, Debug, PartialEq)]
pub struct CpModel {
    factors: [FactorMatrix; ORDER],
    norms: Vec<f64>,
    scales: [Vec<f64>; ORDER],
    pub fit_history: Vec<f64>,
    pub objective_history: Vec<f64>,
    pub warnings: Vec<FitWarning>,
}

impl CpModel {
    /// Normalizes the columns of `working`, recording their norms.
    pub fn from_working_factors(working: [FactorMatrix; ORDER]) -> Result<Self> {
        let rank = working[0].rank();
        if working.iter().any(|f| f.rank() != rank) {
            return Err(Error::contract("working factors disagree on rank"));
        }
        let mut factors = working;
        let mut scales: [Vec<f64>; ORDER] = Default::default();
        for (f, scale) in factors.iter_mut().zip(scales.iter_mut()) {
            *scale = (0..rank).map(|r| f.column_norm(r)).collect();
            for (r, &s) in scale.iter().enumerate() {
                if s > 0.0 {
                    f.scale_column(r, 1.0 / s);
                }
            }
        }
        let norms = (0..rank)
            .map(|r| scales.iter().map(|s| s[r]).product())
            .collect();
        Ok(CpModel {
            factors,
            norms,
            scales,
            fit_history: Vec::new(),
            objective_history: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Reassembles a model from stored parts, checking shapes and finiteness.
    pub fn from_parts(
        factors: [FactorMatrix; ORDER],
        norms: Vec<f64>,
        scales: [Vec<f64>; ORDER],
    ) -> Result<Self> {
        let rank = norms.len();
        if factors.iter().any(|f| f.rank() != rank) || scales.iter().any(|s| s.len() != rank) {
            return Err(Error::contract("model parts disagree on rank"));
        }
        if norms
            .iter()
            .chain(scales.iter().flatten())
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::contract(
                "norms and scales must be finite and nonnegative",
            ));
        }
        Ok(CpModel {
            factors,
            norms,
            scales,
            fit_history: Vec::new(),
            objective_history: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn rank(&self) -> usize {
        self.norms.len()
    }

    pub fn dims(&self) -> [usize; ORDER] {
        std::array::from_fn(|n| self.factors[n].rows())
    }

    pub fn factors(&self) -> &[FactorMatrix; ORDER] {
        &self.factors
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn scales(&self) -> &[Vec<f64>; ORDER] {
        &self.scales
    }

    pub fn working_factors(&self) -> [FactorMatrix; ORDER] {
        std::array::from_fn(|n| {
            let mut f = self.factors[n].clone();
            for (r, &s) in self.scales[n].iter().enumerate() {
                f.scale_column(r, s);
            }
            f
        })
    }

    pub fn predict(&self, index: Index4) -> Result<f64> {
        reconstruct_entry(&self.factors, &self.norms, index)
    }

    /// Flips column signs so that every question-mode and voting-mode column
    /// sums to a nonnegative value. Question flips are paired with the topic
    /// mode and voting flips with the expert mode, leaving the reconstruction
    /// unchanged.
    pub fn fix_signs(&mut self) {
        for r in 0..self.rank() {
            for (lead, partner) in [(0, 1), (2, 3)] {
                if column_sum(&self.factors[lead], r) < 0.0 {
                    self.factors[lead].scale_column(r, -1.0);
                    self.factors[partner].scale_column(r, -1.0);
                }
            }
        }
    }
}

pub(crate) fn column_sum(f: &FactorMatrix, r: usize) -> f64 {
    (0..f.rows()).map(|i| f.get(i, r)).sum()
}

/// `½‖X − ⟦U1, U2, U3, U4⟧‖² + λ_X/2 · Σ_n ‖U_n‖²` on the model's working
/// factors.
pub fn tensor_objective(x: &SparseTensor4, model: &CpModel, lambda_x: f64) -> Result<f64> {
    let residual = residual_norm(x, &model.factors, &model.norms)?;
    let ridge: f64 = model
        .working_factors()
        .iter()
        .map(FactorMatrix::frobenius_sq)
        .sum();
    Ok(0.5 * residual * residual + 0.5 * lambda_x * ridge)
}

/// `1 − ‖X − X̂‖ / ‖X‖`. A zero tensor scores 1 when reconstructed exactly
/// and `-inf` otherwise.
pub fn fit_metric(x: &SparseTensor4, model: &CpModel) -> Result<f64> {
    let residual = residual_norm(x, &model.factors, &model.norms)?;
    Ok(fit_from_residual(residual, x.norm()))
}

pub(crate) fn fit_from_residual(residual: f64, x_norm: f64) -> f64 {
    if x_norm == 0.0 {
        if residual == 0.0 {
            1.0
        } else {
            f64::NEG_INFINITY
        }
    } else {
        (1.0 - residual / x_norm).min(1.0)
    }
}

/// Uniform `[0, 1)` factors drawn mode by mode in row-major order from a
/// ChaCha8 stream seeded with `seed`.
pub fn random_factors(
    dims: [usize; ORDER],
    rank: usize,
    rng: &mut ChaCha8Rng,
) -> [FactorMatrix; ORDER] {
    std::array::from_fn(|n| FactorMatrix::from_fn(dims[n], rank, |_, _| rng.random::<f64>()))
}

pub(crate) fn rank_warnings(dims: [usize; ORDER], rank: usize) -> Vec<FitWarning> {
    dims.iter()
        .enumerate()
        .filter(|(_, &d)| rank > d)
        .map(|(mode, &size)| FitWarning::RankExceedsDimension { mode, size, rank })
        .collect()
}

/// Solves for mode `mode` in place, holding the other factors fixed.
pub(crate) fn update_mode(
    x: &SparseTensor4,
    factors: &mut [FactorMatrix; ORDER],
    mode: usize,
    lambda_x: f64,
) -> Result<()> {
    let mut v = gram_hadamard(factors, Some(mode))?;
    add_diagonal(&mut v, lambda_x);
    let rhs = mttkrp(x, factors, mode)?;
    let updated = right_solve(&rhs, &v);
    if !updated.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite values in factor {mode}"
        )));
    }
    factors[mode] = updated;
    Ok(())
}

/// Row-wise update of the question factor with per-row ridge weights
/// `λ_X + λ_W w_l`.
fn update_question_mode(
    x: &SparseTensor4,
    factors: &mut [FactorMatrix; ORDER],
    lambda_x: f64,
    penalty: &TreePenalty,
) -> Result<()> {
    let v = gram_hadamard(factors, Some(0))?;
    let rhs = mttkrp(x, factors, 0)?;
    let weights = row_regularizer_weights(penalty);
    let mut inverses: HashMap<u64, DMatrix<f64>> = HashMap::new();
    let mut updated = FactorMatrix::zeros(rhs.rows(), rhs.rank());
    for l in 0..rhs.rows() {
        let ridge = lambda_x + penalty.lambda_w() * weights[l];
        let inv = inverses.entry(ridge.to_bits()).or_insert_with(|| {
            let mut vr = v.clone();
            add_diagonal(&mut vr, ridge);
            spd_inverse(&vr)
        });
        let m = rhs.row(l);
        for (c, out) in updated.row_mut(l).iter_mut().enumerate() {
            *out = m.iter().enumerate().map(|(r, a)| a * inv[(r, c)]).sum();
        }
    }
    if !updated.is_finite() {
        return Err(Error::Diverged(
            "non-finite values in question factor".into(),
        ));
    }
    factors[0] = updated;
    Ok(())
}

fn to_array(factors: Vec<FactorMatrix>) -> [FactorMatrix; ORDER] {
    factors
        .try_into()
        .unwrap_or_else(|_| unreachable!("one factor per mode"))
}

/// Redistributes column scales across modes to the split minimizing the
/// ridge (and tree) terms for an unchanged reconstruction.
fn rebalance(factors: &mut [FactorMatrix; ORDER], lambda_x: f64, penalty: Option<&TreePenalty>) {
    let rank = factors[0].rank();
    for r in 0..rank {
        let norms: [f64; ORDER] = std::array::from_fn(|n| factors[n].column_norm(r));
        let product: f64 = norms.iter().product();
        if product == 0.0 {
            continue;
        }
        let mut coeff = [lambda_x; ORDER];
        if let Some(p) = penalty {
            let w = row_regularizer_weights(p);
            let weighted: f64 = (0..factors[0].rows())
                .map(|l| w[l] * (factors[0].get(l, r) / norms[0]).powi(2))
                .sum();
            coeff[0] += p.lambda_w() * weighted;
        }
        let targets: [f64; ORDER] = if coeff.iter().all(|&a| a > 0.0) {
            let t = product.sqrt() * coeff.iter().product::<f64>().powf(0.25);
            std::array::from_fn(|n| (t / coeff[n]).sqrt())
        } else {
            [product.powf(0.25); ORDER]
        };
        for n in 0..ORDER {
            factors[n].scale_column(r, targets[n] / norms[n]);
        }
    }
}

/// Runs regularized CP-ALS on `x`.
pub fn cp_als(
    x: &SparseTensor4,
    config: &AlsConfig,
    tree_penalty: Option<&TreePenalty>,
) -> Result<CpModel> {
    config.validate()?;
    let dims = x.dims();
    if let Some(p) = tree_penalty {
        if p.tree().leaf_count() != dims[0] {
            return Err(Error::contract(format!(
                "tree has {} leaves but the question mode has {} rows",
                p.tree().leaf_count(),
                dims[0]
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut factors = random_factors(dims, config.rank, &mut rng);
    let x_norm = x.norm();

    let evaluate = |factors: &[FactorMatrix; ORDER]| -> Result<(f64, f64)> {
        let snapshot = CpModel::from_working_factors(factors.clone())?;
        let residual = residual_norm(x, &snapshot.factors, &snapshot.norms)?;
        let ridge: f64 = factors.iter().map(FactorMatrix::frobenius_sq).sum();
        let mut objective = 0.5 * residual * residual + 0.5 * config.lambda_x * ridge;
        if let Some(p) = tree_penalty {
            objective += weight_penalty(&factors[0], p)?;
        }
        Ok((objective, residual))
    };

    let sweep = |start: &[FactorMatrix; ORDER]| -> Result<[FactorMatrix; ORDER]> {
        let mut f = start.clone();
        for mode in 0..ORDER {
            match (mode, tree_penalty) {
                (0, Some(p)) => update_question_mode(x, &mut f, config.lambda_x, p)?,
                _ => update_mode(x, &mut f, mode, config.lambda_x)?,
            }
        }
        rebalance(&mut f, config.lambda_x, tree_penalty);
        Ok(f)
    };

    let mut fit_history = Vec::new();
    let mut objective_history = Vec::new();
    let mut current = evaluate(&factors)?.0;
    let mut previous: Option<[FactorMatrix; ORDER]> = None;
    let mut momentum = 0usize;
    for iter in 0..config.max_iters {
        let before = factors.clone();

        let mut accelerated = None;
        if let (true, Some(prev)) = (config.accelerate, &previous) {
            let beta = momentum as f64 / (momentum as f64 + 3.0);
            let start = to_array(along(&before, &difference(&before, prev), beta));
            let candidate = sweep(&start)
                .ok()
                .filter(|c| c.iter().all(FactorMatrix::is_finite));
            if let Some(candidate) = candidate {
                let (o, r) = evaluate(&candidate)?;
                if o < current {
                    accelerated = Some((candidate, o, r));
                    momentum += 1;
                } else {
                    momentum = 0;
                }
            }
        }
        let (next, mut objective, mut residual) = match accelerated {
            Some(a) => a,
            None => {
                let f = sweep(&before)?;
                let (o, r) = evaluate(&f)?;
                (f, o, r)
            }
        };
        factors = next;

        if config.accelerate && iter > 0 {
            let direction = difference(&factors, &before);
            let reach = LINE_SEARCH_REACH * ((iter + 1) as f64).cbrt();
            let objective_along = |f: &[FactorMatrix]| evaluate(&to_array(f.to_vec())).map(|e| e.0);
            if let Some(step) =
                line_search(&factors, &direction, 2 * ORDER, reach, objective_along)?
            {
                let mut candidate = to_array(along(&factors, &direction, step));
                rebalance(&mut candidate, config.lambda_x, tree_penalty);
                if candidate.iter().all(FactorMatrix::is_finite) {
                    let (o, r) = evaluate(&candidate)?;
                    if o < objective {
                        factors = candidate;
                        objective = o;
                        residual = r;
                    }
                }
            }
        }
        previous = Some(before);
        current = objective;

        if !objective.is_finite() {
            return Err(Error::Diverged("objective became non-finite".into()));
        }
        let fit = fit_from_residual(residual, x_norm);
        let previous = fit_history.last().copied();
        fit_history.push(fit);
        objective_history.push(objective);
        if let Some(prev) = previous {
            if fit - prev < config.fit_tolerance {
                break;
            }
        }
    }

    let mut model = CpModel::from_working_factors(factors)?;
    model.fix_signs();
    model.fit_history = fit_history;
    model.objective_history = objective_history;
    model.warnings = rank_warnings(dims, config.rank);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(AlsConfig::default().validate().is_ok());
        assert!(AlsConfig {
            rank: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AlsConfig {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(AlsConfig {
            lambda_x: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn zero_tensor_gives_zero_model() {
        let x = SparseTensor4::zeros([3, 2, 2, 4]).unwrap();
        let cfg = AlsConfig {
            rank: 2,
            lambda_x: 0.5,
            ..Default::default()
        };
        let m = cp_als(&x, &cfg, None).unwrap();
        assert!(m.factors().iter().all(FactorMatrix::is_zero));
        assert!(m.norms().iter().all(|&v| v == 0.0));
        assert_eq!(tensor_objective(&x, &m, 0.5).unwrap(), 0.0);
        assert_eq!(fit_metric(&x, &m).unwrap(), 1.0);
    }

    #[test]
    fn rank_above_dimension_is_flagged() {
        let x = SparseTensor4::new([2, 2, 2, 2], vec![([0, 0, 0, 0], 1.0)]).unwrap();
        let cfg = AlsConfig {
            rank: 3,
            max_iters: 5,
            ..Default::default()
        };
        let m = cp_als(&x, &cfg, None).unwrap();
        assert_eq!(m.warnings.len(), 4);
    }

    #[test]
    fn fit_metric_edge_cases() {
        assert_eq!(fit_from_residual(0.0, 0.0), 1.0);
        assert_eq!(fit_from_residual(1.0, 0.0), f64::NEG_INFINITY);
        assert_eq!(fit_from_residual(2.0, 2.0), 0.0);
    }

    #[test]
    fn zero_factors_give_zero_fit() {
        let x = SparseTensor4::new([2, 1, 1, 1], vec![([0, 0, 0, 0], 2.0), ([1, 0, 0, 0], 1.0)])
            .unwrap();
        let zero: [FactorMatrix; 4] = std::array::from_fn(|n| FactorMatrix::zeros(x.dims()[n], 1));
        let m = CpModel::from_working_factors(zero).unwrap();
        assert_eq!(fit_metric(&x, &m).unwrap(), 0.0);
    }

    #[test]
    fn tree_must_match_question_mode() {
        use crate::tree::TreeBuilder;
        let mut b = TreeBuilder::new();
        b.leaf(None, 0);
        let p = TreePenalty::new(b.build().unwrap(), 0.1).unwrap();
        let x = SparseTensor4::zeros([2, 1, 1, 1]).unwrap();
        assert!(cp_als(&x, &AlsConfig::default(), Some(&p)).is_err());
    }
}
