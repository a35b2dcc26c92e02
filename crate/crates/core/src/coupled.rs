//! Coupled factorization of the tensor with the subsite×answerer and
//! topic×answerer membership matrices.
//!
//! The joint objective is
//!
//! ```text
//! f = ½‖X − ⟦U1,U2,U3,U4⟧‖² + λ_X/2 Σ‖U_n‖²      tensor
//!   + Weight(U1)                                  tree penalty
//!   + ½‖M − SAᵀ‖² + λ_S/2 (‖S‖² + ‖A‖²)           subsite membership
//!   + ½‖N − TAᵀ‖² + λ_T/2 (‖T‖² + ‖A‖²)           topic membership
//!   + λ_site/2 Σ_j ‖S_j − mean(U1[G_j])‖²          subsite coupling
//! ```
//!
//! where `G_j` are the question groups under the level-1 (subsite) nodes of
//! the tree. [`JointSolver`] minimizes it by block coordinate descent; every
//! block update is an exact minimizer of `f` in that block, so `f` never
//! increases.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::als::{
    column_sum, fit_from_residual, random_factors, rank_warnings, tensor_objective, update_mode,
    CpModel,
};
use crate::error::{Error, Result};
use crate::linalg::{add_diagonal, along, difference, line_search, right_solve, spd_inverse};
use crate::tensor::{gram_hadamard, mttkrp, residual_norm, FactorMatrix, SparseTensor4, ORDER};
use crate::tree::{row_regularizer_weights, weight_penalty, HierarchyTree, TreePenalty};

pub const DEFAULT_LAMBDA_W: f64 = 0.1;
pub const DEFAULT_LAMBDA_S: f64 = 0.1;
pub const DEFAULT_LAMBDA_T: f64 = 0.1;
pub const DEFAULT_MAX_SWEEPS: usize = 100;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Binary sparse matrix; stored cells are ones, everything else is an
/// observed zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize)>,
}

impl MembershipMatrix {
    pub fn new(
        rows: usize,
        cols: usize,
        entries: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize)> = entries.into_iter().collect();
        if let Some(&(r, c)) = entries.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::contract(format!(
                "membership cell ({r}, {c}) out of range for {rows}x{cols}"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        Ok(MembershipMatrix {
            rows,
            cols,
            entries,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.entries.binary_search(&(row, col)).is_ok()
    }

    /// `self · B` for `B` with `cols` rows.
    fn mul(&self, b: &FactorMatrix) -> FactorMatrix {
        let mut out = FactorMatrix::zeros(self.rows, b.rank());
        for &(r, c) in &self.entries {
            for (o, v) in out.row_mut(r).iter_mut().zip(b.row(c)) {
                *o += v;
            }
        }
        out
    }

    /// `selfᵀ · B` for `B` with `rows` rows.
    fn tr_mul(&self, b: &FactorMatrix) -> FactorMatrix {
        let mut out = FactorMatrix::zeros(self.cols, b.rank());
        for &(r, c) in &self.entries {
            for (o, v) in out.row_mut(c).iter_mut().zip(b.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// `‖self − L Rᵀ‖²_F`, summed over every cell.
    fn residual_sq(&self, left: &FactorMatrix, right: &FactorMatrix) -> f64 {
        let mut total = 0.0;
        let mut cells = self.entries.iter().peekable();
        for r in 0..self.rows {
            let lr = left.row(r);
            for c in 0..self.cols {
                let pred: f64 = lr.iter().zip(right.row(c)).map(|(a, b)| a * b).sum();
                let observed = if cells.peek() == Some(&&(r, c)) {
                    cells.next();
                    1.0
                } else {
                    0.0
                };
                total += (observed - pred) * (observed - pred);
            }
        }
        total
    }
}

fn check_pair(
    name: &str,
    m: &MembershipMatrix,
    left: &FactorMatrix,
    right: &FactorMatrix,
) -> Result<()> {
    if left.rows() != m.rows || right.rows() != m.cols || left.rank() != right.rank() {
        return Err(Error::contract(format!(
            "{name}: factors {}x{} and {}x{} do not fit a {}x{} matrix",
            left.rows(),
            left.rank(),
            right.rows(),
            right.rank(),
            m.rows,
            m.cols
        )));
    }
    Ok(())
}

/// `½‖M − SAᵀ‖² + λ_S/2 (‖S‖² + ‖A‖²)`.
pub fn networks_objective(
    s: &FactorMatrix,
    a: &FactorMatrix,
    m: &MembershipMatrix,
    lambda_s: f64,
) -> Result<f64> {
    check_pair("networks", m, s, a)?;
    Ok(0.5 * m.residual_sq(s, a) + 0.5 * lambda_s * (s.frobenius_sq() + a.frobenius_sq()))
}

/// `½‖N − TAᵀ‖² + λ_T/2 (‖T‖² + ‖A‖²)`.
pub fn topic_objective(
    t: &FactorMatrix,
    a: &FactorMatrix,
    n: &MembershipMatrix,
    lambda_t: f64,
) -> Result<f64> {
    check_pair("topic", n, t, a)?;
    Ok(0.5 * n.residual_sq(t, a) + 0.5 * lambda_t * (t.frobenius_sq() + a.frobenius_sq()))
}

/// Leaf rows under each level-1 node, in ascending node id.
fn subsite_groups(tree: &HierarchyTree) -> Result<Vec<Vec<usize>>> {
    tree.level_nodes(1)
        .into_iter()
        .enumerate()
        .map(|(j, node)| {
            let g = tree.group(node);
            if g.is_empty() {
                Err(Error::DegenerateGroup(j))
            } else {
                Ok(g.to_vec())
            }
        })
        .collect()
}

fn group_means(u1: &FactorMatrix, groups: &[Vec<usize>]) -> FactorMatrix {
    let mut means = FactorMatrix::zeros(groups.len(), u1.rank());
    for (j, g) in groups.iter().enumerate() {
        let inv = 1.0 / g.len() as f64;
        for &k in g {
            for (m, v) in means.row_mut(j).iter_mut().zip(u1.row(k)) {
                *m += v * inv;
            }
        }
    }
    means
}

/// `λ/2 · Σ_j ‖S_j − mean of U1 rows in G_j‖²` over the subsite groups.
pub fn site_regularizer(
    s: &FactorMatrix,
    u1: &FactorMatrix,
    tree: &HierarchyTree,
    lambda_s: f64,
) -> Result<f64> {
    let groups = subsite_groups(tree)?;
    if s.rows() != groups.len() || u1.rows() != tree.leaf_count() || s.rank() != u1.rank() {
        return Err(Error::contract(format!(
            "site: {} subsite rows for {} groups, {} question rows for {} leaves",
            s.rows(),
            groups.len(),
            u1.rows(),
            tree.leaf_count()
        )));
    }
    let means = group_means(u1, &groups);
    let dist: f64 = (0..s.rows())
        .map(|j| {
            s.row(j)
                .iter()
                .zip(means.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(0.5 * lambda_s * dist)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLambdas {
    pub x: f64,
    pub w: f64,
    pub s: f64,
    pub t: f64,
    pub site: f64,
}

impl Default for JointLambdas {
    fn default() -> Self {
        JointLambdas {
            x: crate::als::DEFAULT_LAMBDA_X,
            w: DEFAULT_LAMBDA_W,
            s: DEFAULT_LAMBDA_S,
            t: DEFAULT_LAMBDA_T,
            site: DEFAULT_LAMBDA_S,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointConfig {
    pub rank: usize,
    pub max_sweeps: usize,
    /// Stop once a sweep lowers the objective by less than this fraction.
    pub tolerance: f64,
    pub lambdas: JointLambdas,
    pub seed: u64,
    /// Extrapolate between sweeps (momentum and an exact line search over
    /// all blocks), keeping a step only when it lowers the objective.
    pub accelerate: bool,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            rank: 8,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            tolerance: DEFAULT_TOLERANCE,
            lambdas: JointLambdas::default(),
            seed: 0,
            accelerate: true,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::contract("rank must be at least 1"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::contract("max_sweeps must be at least 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::contract("tolerance must be >= 0"));
        }
        let l = &self.lambdas;
        for (name, v) in [
            ("x", l.x),
            ("w", l.w),
            ("s", l.s),
            ("t", l.t),
            ("site", l.site),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "lambda_{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointModel {
    pub cp: CpModel,
    /// Subsite factors, `X × R`.
    pub s: FactorMatrix,
    /// Answerer factors, `Z × R`, shared by both membership matrices.
    pub a: FactorMatrix,
    /// Topic factors, `Y × R`.
    pub t: FactorMatrix,
    pub lambdas: JointLambdas,
    /// Joint objective before the first sweep, then after every sweep.
    pub objective_history: Vec<f64>,
}

/// Sum of the five objective terms. The tree penalty's own `λ_W` is used;
/// the other weights come from `model.lambdas`.
pub fn joint_objective(
    x: &SparseTensor4,
    m: &MembershipMatrix,
    n: &MembershipMatrix,
    model: &JointModel,
    penalty: &TreePenalty,
) -> Result<f64> {
    let working = model.cp.working_factors();
    let l = &model.lambdas;
    Ok(tensor_objective(x, &model.cp, l.x)?
        + weight_penalty(&working[0], penalty)?
        + networks_objective(&model.s, &model.a, m, l.s)?
        + topic_objective(&model.t, &model.a, n, l.t)?
        + site_regularizer(&model.s, &working[0], penalty.tree(), l.site)?)
}

/// One block of the coordinate descent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Question,
    Topic,
    Voting,
    Expert,
    Subsite,
    Answerer,
    TopicMembership,
}

impl Block {
    /// Update order within a sweep.
    pub const SWEEP: [Block; 7] = [
        Block::Question,
        Block::Topic,
        Block::Voting,
        Block::Expert,
        Block::Subsite,
        Block::Answerer,
        Block::TopicMembership,
    ];
}

/// Block coordinate descent state for the joint objective.
#[derive(Debug)]
pub struct JointSolver<'a> {
    x: &'a SparseTensor4,
    m: &'a MembershipMatrix,
    n: &'a MembershipMatrix,
    penalty: TreePenalty,
    groups: Vec<Vec<usize>>,
    /// Subsite group of every question row, if any.
    row_group: Vec<Option<usize>>,
    config: JointConfig,
    factors: [FactorMatrix; ORDER],
    s: FactorMatrix,
    a: FactorMatrix,
    t: FactorMatrix,
    fit_history: Vec<f64>,
}

impl<'a> JointSolver<'a> {
    /// Validates shapes and initializes: `U1..U4`, then `A`, then `T` are drawn
    /// uniformly from `[0, 1)` off one ChaCha8 stream seeded with
    /// `config.seed`; `S` starts at zero.
    pub fn new(
        x: &'a SparseTensor4,
        m: &'a MembershipMatrix,
        n: &'a MembershipMatrix,
        tree: &HierarchyTree,
        config: &JointConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dims = x.dims();
        let penalty = TreePenalty::new(tree.clone(), config.lambdas.w)?;
        let groups = subsite_groups(tree)?;
        if tree.leaf_count() != dims[0] {
            return Err(Error::contract(format!(
                "tree has {} leaves but the tensor has {} questions",
                tree.leaf_count(),
                dims[0]
            )));
        }
        if m.rows() != groups.len() {
            return Err(Error::contract(format!(
                "subsite matrix has {} rows but the tree has {} subsite groups",
                m.rows(),
                groups.len()
            )));
        }
        if n.rows() != dims[1] {
            return Err(Error::contract(format!(
                "topic matrix has {} rows but the tensor has {} topics",
                n.rows(),
                dims[1]
            )));
        }
        if m.cols() != dims[3] || n.cols() != dims[3] {
            return Err(Error::contract(format!(
                "membership matrices have {} and {} answerer columns but the tensor has {} experts",
                m.cols(),
                n.cols(),
                dims[3]
            )));
        }
        let mut row_group = vec![None; dims[0]];
        for (j, g) in groups.iter().enumerate() {
            for &k in g {
                row_group[k] = Some(j);
            }
        }

        let rank = config.rank;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let factors = random_factors(dims, rank, &mut rng);
        let [a, t] = {
            use rand::Rng;
            [m.cols(), n.rows()]
                .map(|rows| FactorMatrix::from_fn(rows, rank, |_, _| rng.random::<f64>()))
        };
        let s = FactorMatrix::zeros(m.rows(), rank);
        Ok(JointSolver {
            x,
            m,
            n,
            penalty,
            groups,
            row_group,
            config: config.clone(),
            factors,
            s,
            a,
            t,
            fit_history: Vec::new(),
        })
    }

    pub fn penalty(&self) -> &TreePenalty {
        &self.penalty
    }

    pub fn update(&mut self, block: Block) -> Result<()> {
        let l = self.config.lambdas;
        match block {
            Block::Question => self.update_question()?,
            Block::Topic => update_mode(self.x, &mut self.factors, 1, l.x)?,
            Block::Voting => update_mode(self.x, &mut self.factors, 2, l.x)?,
            Block::Expert => update_mode(self.x, &mut self.factors, 3, l.x)?,
            Block::Subsite => {
                let means = group_means(&self.factors[0], &self.groups);
                let mut rhs = self.m.mul(&self.a);
                for j in 0..rhs.rows() {
                    for (o, g) in rhs.row_mut(j).iter_mut().zip(means.row(j)) {
                        *o += l.site * g;
                    }
                }
                let mut v = self.a.gram();
                add_diagonal(&mut v, l.s + l.site);
                self.s = right_solve(&rhs, &v);
            }
            Block::Answerer => {
                let mut rhs = self.m.tr_mul(&self.s);
                let from_topics = self.n.tr_mul(&self.t);
                for z in 0..rhs.rows() {
                    for (o, v) in rhs.row_mut(z).iter_mut().zip(from_topics.row(z)) {
                        *o += v;
                    }
                }
                let mut v = self.s.gram() + self.t.gram();
                add_diagonal(&mut v, l.s + l.t);
                self.a = right_solve(&rhs, &v);
            }
            Block::TopicMembership => {
                let rhs = self.n.mul(&self.a);
                let mut v = self.a.gram();
                add_diagonal(&mut v, l.t);
                self.t = right_solve(&rhs, &v);
            }
        }
        let finite = self.factors.iter().all(FactorMatrix::is_finite)
            && self.s.is_finite()
            && self.a.is_finite()
            && self.t.is_finite();
        if !finite {
            return Err(Error::Diverged(format!(
                "non-finite values after {block:?} update"
            )));
        }
        Ok(())
    }

    /// Exact minimization over the question factor. Rows of subsite group
    /// `j` are coupled through their mean:
    ///
    /// ```text
    /// B_k u_k = m_k + c,   c = β (S_j − ū),   β = λ_site / |G_j|
    /// (I + β/|G_j| · Σ B_k⁻¹) c = β S_j − β/|G_j| · Σ B_k⁻¹ m_k
    /// ```
    ///
    /// with `B_k = V + (λ_X + λ_W w_k) I`.
    fn update_question(&mut self) -> Result<()> {
        let l = self.config.lambdas;
        let v = gram_hadamard(&self.factors, Some(0))?;
        let rhs = mttkrp(self.x, &self.factors, 0)?;
        let weights = row_regularizer_weights(&self.penalty);
        let rank = self.config.rank;
        let inverse_for = |k: usize| {
            let mut b = v.clone();
            add_diagonal(&mut b, l.x + l.w * weights[k]);
            spd_inverse(&b)
        };
        let apply = |inv: &DMatrix<f64>, vec: &[f64]| -> Vec<f64> {
            (0..rank)
                .map(|c| (0..rank).map(|r| vec[r] * inv[(r, c)]).sum())
                .collect()
        };

        let mut updated = FactorMatrix::zeros(rhs.rows(), rank);
        for k in (0..rhs.rows()).filter(|&k| self.row_group[k].is_none()) {
            let u = apply(&inverse_for(k), rhs.row(k));
            updated.row_mut(k).copy_from_slice(&u);
        }
        for (j, group) in self.groups.iter().enumerate() {
            let size = group.len() as f64;
            let beta = l.site / size;
            let inverses: Vec<DMatrix<f64>> = group.iter().map(|&k| inverse_for(k)).collect();
            let mut p_sum = DMatrix::zeros(rank, rank);
            let mut q_sum = vec![0.0; rank];
            for (inv, &k) in inverses.iter().zip(group) {
                p_sum += inv;
                for (q, v) in q_sum.iter_mut().zip(apply(inv, rhs.row(k))) {
                    *q += v;
                }
            }
            let mut lhs = p_sum * (beta / size);
            add_diagonal(&mut lhs, 1.0);
            let target = nalgebra::DVector::from_iterator(
                rank,
                (0..rank).map(|r| beta * self.s.get(j, r) - beta / size * q_sum[r]),
            );
            let c = lhs.lu().solve(&target).ok_or_else(|| {
                Error::Diverged(format!("singular coupling system for subsite {j}"))
            })?;
            for (inv, &k) in inverses.iter().zip(group) {
                let shifted: Vec<f64> = rhs
                    .row(k)
                    .iter()
                    .zip(c.iter())
                    .map(|(m, c)| m + c)
                    .collect();
                let u = apply(inv, &shifted);
                updated.row_mut(k).copy_from_slice(&u);
            }
        }
        self.factors[0] = updated;
        Ok(())
    }

    pub fn sweep(&mut self) -> Result<()> {
        for block in Block::SWEEP {
            self.update(block)?;
        }
        Ok(())
    }

    /// Current state as a model, with signs left as they are.
    pub fn model(&self) -> Result<JointModel> {
        self.model_of(&self.state())
    }

    fn model_of(&self, state: &[FactorMatrix]) -> Result<JointModel> {
        let factors: [FactorMatrix; ORDER] = std::array::from_fn(|n| state[n].clone());
        let mut cp = CpModel::from_working_factors(factors)?;
        cp.fit_history = self.fit_history.clone();
        cp.warnings = rank_warnings(self.x.dims(), self.config.rank);
        Ok(JointModel {
            cp,
            s: state[ORDER].clone(),
            a: state[ORDER + 1].clone(),
            t: state[ORDER + 2].clone(),
            lambdas: self.config.lambdas,
            objective_history: Vec::new(),
        })
    }

    pub fn objective(&self) -> Result<f64> {
        self.objective_of(&self.state())
    }

    fn objective_of(&self, state: &[FactorMatrix]) -> Result<f64> {
        joint_objective(
            self.x,
            self.m,
            self.n,
            &self.model_of(state)?,
            &self.penalty,
        )
    }

    /// All blocks in order `U1..U4, S, A, T`.
    fn state(&self) -> Vec<FactorMatrix> {
        let mut state = self.factors.to_vec();
        state.extend([self.s.clone(), self.a.clone(), self.t.clone()]);
        state
    }

    fn set_state(&mut self, mut state: Vec<FactorMatrix>) {
        self.t = state.pop().unwrap();
        self.a = state.pop().unwrap();
        self.s = state.pop().unwrap();
        for (f, v) in self.factors.iter_mut().zip(state) {
            *f = v;
        }
    }

    /// One sweep from `start`, returning the new state and its objective, or
    /// `None` if the sweep failed or left finite values behind.
    fn sweep_from(&mut self, start: Vec<FactorMatrix>) -> Result<Option<(Vec<FactorMatrix>, f64)>> {
        self.set_state(start);
        match self.sweep().and_then(|_| self.objective()) {
            Ok(v) if v.is_finite() => Ok(Some((self.state(), v))),
            Ok(_) | Err(Error::Diverged(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Plain sweep from the current state, then (when accelerating) a
    /// momentum sweep tried first and an exact line search along the step.
    fn accelerated_sweep(
        &mut self,
        sweep: usize,
        current: f64,
        previous: &mut Option<Vec<FactorMatrix>>,
        momentum: &mut usize,
    ) -> Result<Option<f64>> {
        let before = self.state();
        let mut next = None;
        if let (true, Some(prev)) = (self.config.accelerate, previous.as_ref()) {
            let beta = *momentum as f64 / (*momentum as f64 + 3.0);
            let start = along(&before, &difference(&before, prev), beta);
            match self.sweep_from(start)? {
                Some((state, o)) if o < current => {
                    next = Some((state, o));
                    *momentum += 1;
                }
                _ => *momentum = 0,
            }
        }
        let (state, mut objective) = match next {
            Some(n) => n,
            None => match self.sweep_from(before.clone())? {
                Some(n) => n,
                None => return Ok(None),
            },
        };
        self.set_state(state);
        if self.config.accelerate && sweep > 1 {
            let current_state = self.state();
            let direction = difference(&current_state, &before);
            let reach = crate::als::LINE_SEARCH_REACH * (sweep as f64).cbrt();
            let step = line_search(&current_state, &direction, 2 * ORDER, reach, |s| {
                self.objective_of(s)
            })?;
            if let Some(step) = step {
                let candidate = along(&current_state, &direction, step);
                if let Ok(o) = self.objective_of(&candidate) {
                    if o < objective {
                        self.set_state(candidate);
                        objective = o;
                    }
                }
            }
        }
        *previous = Some(before);
        Ok(Some(objective))
    }

    fn record_fit(&mut self) -> Result<()> {
        let cp = CpModel::from_working_factors(self.factors.clone())?;
        let residual = residual_norm(self.x, cp.factors(), cp.norms())?;
        self.fit_history
            .push(fit_from_residual(residual, self.x.norm()));
        Ok(())
    }

    /// Sign convention for the returned model: every question and voting
    /// column sums to a nonnegative value. A question flip also flips the
    /// topic, subsite, answerer and topic-membership columns; a voting flip
    /// also flips the expert column. The objective is unchanged.
    fn fix_signs(&mut self) {
        for r in 0..self.config.rank {
            if column_sum(&self.factors[0], r) < 0.0 {
                for f in &mut self.factors[..2] {
                    f.scale_column(r, -1.0);
                }
                for f in [&mut self.s, &mut self.a, &mut self.t] {
                    f.scale_column(r, -1.0);
                }
            }
            if column_sum(&self.factors[2], r) < 0.0 {
                for f in &mut self.factors[2..] {
                    f.scale_column(r, -1.0);
                }
            }
        }
    }

    /// Sweeps until the relative objective improvement drops below the
    /// tolerance or the sweep budget runs out.
    pub fn run(mut self) -> Result<JointModel> {
        let mut history = vec![self.objective()?];
        let mut last_finite = self.model()?;
        last_finite.objective_history = history.clone();
        let mut previous_state = None;
        let mut momentum = 0;
        for sweep in 1..=self.config.max_sweeps {
            let previous = *history.last().unwrap();
            let objective = match self.accelerated_sweep(
                sweep,
                previous,
                &mut previous_state,
                &mut momentum,
            )? {
                Some(v) => v,
                None => {
                    return Err(Error::JointDiverged {
                        sweep,
                        last_finite: Box::new(last_finite),
                    })
                }
            };
            self.record_fit()?;
            history.push(objective);
            last_finite = self.model()?;
            last_finite.objective_history = history.clone();
            let improvement = (previous - objective) / previous.abs().max(f64::MIN_POSITIVE);
            if objective == 0.0 || improvement < self.config.tolerance {
                break;
            }
        }
        self.fix_signs();
        let mut model = self.model()?;
        model.objective_history = history;
        Ok(model)
    }
}

/// Fits the joint model by block coordinate descent.
pub fn fit_joint(
    x: &SparseTensor4,
    m: &MembershipMatrix,
    n: &MembershipMatrix,
    tree: &HierarchyTree,
    config: &JointConfig,
) -> Result<JointModel> {
    JointSolver::new(x, m, n, tree, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeBuilder;

    fn fm(rows: &[&[f64]]) -> FactorMatrix {
        FactorMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn exact_membership_fit_is_zero() {
        let m = MembershipMatrix::new(2, 2, [(0, 0), (1, 1)]).unwrap();
        let s = fm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let a = fm(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(networks_objective(&s, &a, &m, 0.0).unwrap(), 0.0);
        assert_eq!(topic_objective(&s, &a, &m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn zero_factors_give_half_nnz() {
        let m = MembershipMatrix::new(2, 3, [(0, 0), (1, 1), (1, 2), (1, 2)]).unwrap();
        assert_eq!(m.nnz(), 3);
        let s = FactorMatrix::zeros(2, 2);
        let a = FactorMatrix::zeros(3, 2);
        assert_eq!(networks_objective(&s, &a, &m, 1.0).unwrap(), 1.5);
        assert_eq!(topic_objective(&s, &a, &m, 1.0).unwrap(), 1.5);
    }

    #[test]
    fn membership_shape_errors() {
        assert!(MembershipMatrix::new(1, 1, [(1, 0)]).is_err());
        let m = MembershipMatrix::new(2, 2, []).unwrap();
        assert!(networks_objective(
            &FactorMatrix::zeros(3, 1),
            &FactorMatrix::zeros(2, 1),
            &m,
            0.0
        )
        .is_err());
    }

    #[test]
    fn site_regularizer_at_group_means() {
        let mut b = TreeBuilder::new();
        let root = b.internal(None, 0.5, 0.5);
        let s0 = b.internal(Some(root), 0.5, 0.5);
        let s1 = b.internal(Some(root), 0.5, 0.5);
        b.leaf(Some(s0), 0);
        b.leaf(Some(s0), 1);
        b.leaf(Some(s1), 2);
        let tree = b.build().unwrap();
        let u1 = fm(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let s = fm(&[&[2.0, 3.0], &[5.0, 6.0]]);
        assert_eq!(site_regularizer(&s, &u1, &tree, 7.0).unwrap(), 0.0);
        let s = fm(&[&[2.0, 3.0], &[5.0, 8.0]]);
        assert_eq!(site_regularizer(&s, &u1, &tree, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn single_question_site() {
        let mut b = TreeBuilder::new();
        let root = b.internal(None, 0.5, 0.5);
        let s0 = b.internal(Some(root), 0.5, 0.5);
        b.leaf(Some(s0), 0);
        let tree = b.build().unwrap();
        let u1 = fm(&[&[0.3, -1.0]]);
        assert_eq!(site_regularizer(&u1, &u1, &tree, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_subsite_group_is_degenerate() {
        let mut b = TreeBuilder::new();
        let root = b.internal(None, 0.5, 0.5);
        let s0 = b.internal(Some(root), 0.5, 0.5);
        b.internal(Some(root), 0.5, 0.5);
        b.leaf(Some(s0), 0);
        let tree = b.build().unwrap();
        let err = site_regularizer(
            &FactorMatrix::zeros(2, 1),
            &FactorMatrix::zeros(1, 1),
            &tree,
            1.0,
        );
        assert!(matches!(err, Err(Error::DegenerateGroup(1))));
    }

    #[test]
    fn joint_config_validation() {
        assert!(JointConfig::default().validate().is_ok());
        let mut c = JointConfig::default();
        c.lambdas.site = f64::NAN;
        assert!(c.validate().is_err());
    }
}
