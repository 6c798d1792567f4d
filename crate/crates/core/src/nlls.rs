//! Levenberg–Marquardt over parameter blocks.
//!
//! A problem is a list of [`ParameterBlock`]s plus a [`Residuals`] evaluator
//! that returns residual blocks, each with analytic Jacobians against the
//! (tangent space of the) blocks it touches. The normal equations are
//! accumulated block-sparse and solved by Cholesky with `λ I` added to the
//! diagonal. When many small blocks never share a residual (per-frame
//! rotations, say) they are eliminated first through the Schur complement.
//!
//! Quaternion blocks are updated on the manifold: a tangent step `δ` maps to
//! `q ⊗ exp(δ)`, followed by renormalization.

use nalgebra::{Cholesky, DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitQuaternion;

const MAX_DAMPING: f64 = 1e32;
const MIN_DAMPING: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Euclidean(usize),
    UnitQuaternion,
}

impl BlockKind {
    pub fn ambient_dim(&self) -> usize {
        match self {
            BlockKind::Euclidean(n) => *n,
            BlockKind::UnitQuaternion => 4,
        }
    }

    pub fn tangent_dim(&self) -> usize {
        match self {
            BlockKind::Euclidean(n) => *n,
            BlockKind::UnitQuaternion => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub kind: BlockKind,
    /// Quaternions are stored `[w, x, y, z]`.
    pub values: Vec<f64>,
    pub frozen: bool,
}

impl ParameterBlock {
    pub fn euclidean(values: Vec<f64>) -> Self {
        Self {
            kind: BlockKind::Euclidean(values.len()),
            values,
            frozen: false,
        }
    }

    pub fn quaternion(q: &UnitQuaternion) -> Self {
        Self {
            kind: BlockKind::UnitQuaternion,
            values: q.to_array().to_vec(),
            frozen: false,
        }
    }

    pub fn frozen(mut self, frozen: bool) -> Self {
        self.frozen = frozen;
        self
    }

    pub fn tangent_dim(&self) -> usize {
        self.kind.tangent_dim()
    }

    /// Value of a quaternion block. Panics on a Euclidean block.
    pub fn as_quaternion(&self) -> UnitQuaternion {
        assert_eq!(self.kind, BlockKind::UnitQuaternion, "not a quaternion block");
        let v = &self.values;
        UnitQuaternion::new(v[0], v[1], v[2], v[3]).unwrap_or_default()
    }

    /// Moves the block by a tangent-space step.
    pub fn retract(&mut self, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.tangent_dim());
        match self.kind {
            BlockKind::Euclidean(_) => {
                for (v, d) in self.values.iter_mut().zip(delta) {
                    *v += d;
                }
            }
            BlockKind::UnitQuaternion => {
                let step = UnitQuaternion::exp(&Vector3::new(delta[0], delta[1], delta[2]));
                let q = self.as_quaternion().compose(&step);
                self.values.copy_from_slice(&q.to_array());
            }
        }
    }
}

/// Jacobian of one residual block against one parameter block, row-major
/// with `residuals.len()` rows and the block's tangent dimension as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockJacobian {
    pub block: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualBlock {
    pub residuals: Vec<f64>,
    pub jacobians: Vec<BlockJacobian>,
}

/// Residual evaluator. Must be reentrant and keep its output dimension fixed.
pub trait Residuals {
    /// Residual blocks at `blocks`; Jacobians are filled only when requested.
    /// Jacobians of frozen blocks may be omitted.
    fn evaluate(&self, blocks: &[ParameterBlock], with_jacobians: bool) -> Vec<ResidualBlock>;
}

impl<F> Residuals for F
where
    F: Fn(&[ParameterBlock], bool) -> Vec<ResidualBlock>,
{
    fn evaluate(&self, blocks: &[ParameterBlock], with_jacobians: bool) -> Vec<ResidualBlock> {
        self(blocks, with_jacobians)
    }
}

pub struct NllsProblem<R> {
    pub blocks: Vec<ParameterBlock>,
    pub residuals: R,
}

impl<R: Residuals> NllsProblem<R> {
    pub fn new(blocks: Vec<ParameterBlock>, residuals: R) -> Self {
        Self { blocks, residuals }
    }

    /// `½‖r‖²` at the current values.
    pub fn cost(&self) -> f64 {
        cost_of(&self.residuals.evaluate(&self.blocks, false))
    }

    pub fn residual_vector(&self) -> DVector<f64> {
        stack(&self.residuals.evaluate(&self.blocks, false))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// Max-norm of the gradient `Jᵀr`.
    pub gradient_tol: f64,
    /// Step norm relative to the parameter norm.
    pub step_tol: f64,
    /// Relative cost decrease of an accepted step.
    pub cost_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 0.1,
            gradient_tol: 1e-10,
            step_tol: 1e-12,
            cost_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    CostTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: Termination,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl SolveReport {
    /// True when the accepted costs never increase.
    pub fn is_monotone(&self) -> bool {
        self.cost_history.windows(2).all(|w| w[1] <= w[0])
    }
}

fn cost_of(blocks: &[ResidualBlock]) -> f64 {
    0.5 * blocks
        .iter()
        .flat_map(|b| b.residuals.iter())
        .map(|r| r * r)
        .sum::<f64>()
}

fn stack(blocks: &[ResidualBlock]) -> DVector<f64> {
    DVector::from_iterator(
        blocks.iter().map(|b| b.residuals.len()).sum(),
        blocks.iter().flat_map(|b| b.residuals.iter().copied()),
    )
}

/// Column offset of every non-frozen block in the reduced tangent space.
struct Layout {
    offsets: Vec<Option<usize>>,
    dim: usize,
}

impl Layout {
    fn new(blocks: &[ParameterBlock]) -> Self {
        let mut dim = 0;
        let offsets = blocks
            .iter()
            .map(|b| {
                if b.frozen {
                    None
                } else {
                    let o = dim;
                    dim += b.tangent_dim();
                    Some(o)
                }
            })
            .collect();
        Self { offsets, dim }
    }
}

struct Linearization {
    cost: f64,
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
}

fn linearize(blocks: &[ParameterBlock], residuals: &[ResidualBlock], layout: &Layout) -> Option<Linearization> {
    let n = layout.dim;
    let mut hessian = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    for rb in residuals {
        let rows = rb.residuals.len();
        if rb.residuals.iter().any(|r| !r.is_finite()) {
            return None;
        }
        let active: Vec<(usize, usize, &[f64])> = rb
            .jacobians
            .iter()
            .filter_map(|j| {
                let off = layout.offsets[j.block]?;
                Some((off, blocks[j.block].tangent_dim(), j.values.as_slice()))
            })
            .collect();
        for &(oa, da, ja) in &active {
            if ja.len() != rows * da || ja.iter().any(|v| !v.is_finite()) {
                return None;
            }
            for c in 0..da {
                let mut acc = 0.0;
                for r in 0..rows {
                    acc += ja[r * da + c] * rb.residuals[r];
                }
                gradient[oa + c] += acc;
            }
            for &(ob, db, jb) in &active {
                if ob < oa {
                    continue;
                }
                for ca in 0..da {
                    for cb in 0..db {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += ja[r * da + ca] * jb[r * db + cb];
                        }
                        hessian[(oa + ca, ob + cb)] += acc;
                    }
                }
            }
        }
    }
    // mirror the upper triangle (blocks sharing an offset filled both halves)
    for i in 0..n {
        for j in 0..i {
            hessian[(i, j)] = hessian[(j, i)];
        }
    }
    let cost = cost_of(residuals);
    cost.is_finite().then_some(Linearization {
        cost,
        hessian,
        gradient,
    })
}

fn apply_step(blocks: &[ParameterBlock], layout: &Layout, delta: &DVector<f64>) -> Vec<ParameterBlock> {
    let mut out = blocks.to_vec();
    for (b, off) in out.iter_mut().zip(&layout.offsets) {
        if let Some(o) = off {
            let d = b.tangent_dim();
            b.retract(&delta.as_slice()[*o..*o + d]);
        }
    }
    out
}

fn parameter_norm(blocks: &[ParameterBlock]) -> f64 {
    blocks
        .iter()
        .filter(|b| !b.frozen)
        .flat_map(|b| b.values.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

fn raise(damping: f64, options: &SolveOptions) -> f64 {
    if damping > 0.0 {
        damping * options.damping_up
    } else {
        options.initial_damping
    }
}

fn damped_solve(lin: &Linearization, damping: f64, plan: Option<&SchurPlan>) -> Option<DVector<f64>> {
    let step = match plan {
        Some(plan) => plan.solve(lin, damping)?,
        None => {
            let mut a = lin.hessian.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += damping;
            }
            Cholesky::new(a)?.solve(&(-&lin.gradient))
        }
    };
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Tangent columns that can be eliminated block by block before the dense
/// solve, because no residual couples two of them.
struct SchurPlan {
    eliminated: Vec<(usize, usize)>,
    kept: Vec<usize>,
}

impl SchurPlan {
    /// Greedy independent set over the block co-occurrence graph, lowest
    /// degree first. Returns `None` when elimination would not shrink the
    /// dense system below half its size.
    fn new(blocks: &[ParameterBlock], residuals: &[ResidualBlock], layout: &Layout) -> Option<Self> {
        let n = blocks.len();
        let mut neighbours = vec![std::collections::BTreeSet::new(); n];
        for rb in residuals {
            let touched: Vec<usize> = rb
                .jacobians
                .iter()
                .map(|j| j.block)
                .filter(|&b| layout.offsets[b].is_some())
                .collect();
            for &a in &touched {
                for &b in &touched {
                    if a != b {
                        neighbours[a].insert(b);
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&b| layout.offsets[b].is_some()).collect();
        order.sort_by_key(|&b| (neighbours[b].len(), b));
        let mut chosen = vec![false; n];
        let mut blocked = vec![false; n];
        for b in order {
            if blocked[b] {
                continue;
            }
            chosen[b] = true;
            for &m in &neighbours[b] {
                blocked[m] = true;
            }
        }
        let mut eliminated = Vec::new();
        let mut kept = Vec::new();
        for (b, off) in layout.offsets.iter().enumerate() {
            let Some(off) = *off else { continue };
            let d = blocks[b].tangent_dim();
            if chosen[b] {
                eliminated.push((off, d));
            } else {
                kept.extend(off..off + d);
            }
        }
        let eliminated_dim: usize = eliminated.iter().map(|e| e.1).sum();
        (eliminated.len() > 1 && eliminated_dim > layout.dim / 2).then_some(Self { eliminated, kept })
    }

    fn solve(&self, lin: &Linearization, damping: f64) -> Option<DVector<f64>> {
        let h = &lin.hessian;
        let g = &lin.gradient;
        let r = self.kept.len();
        let mut schur = DMatrix::from_fn(r, r, |i, j| h[(self.kept[i], self.kept[j])]);
        for i in 0..r {
            schur[(i, i)] += damping;
        }
        let mut rhs = DVector::from_fn(r, |i, _| -g[self.kept[i]]);
        let mut inverses = Vec::with_capacity(self.eliminated.len());
        for &(off, d) in &self.eliminated {
            let mut a = h.view((off, off), (d, d)).clone_owned();
            for i in 0..d {
                a[(i, i)] += damping;
            }
            let inv = Cholesky::new(a)?.inverse();
            let coupling = DMatrix::from_fn(r, d, |i, j| h[(self.kept[i], off + j)]);
            let ci = &coupling * &inv;
            schur -= &ci * coupling.transpose();
            rhs += &ci * g.rows(off, d);
            inverses.push((inv, coupling));
        }
        let kept_step = Cholesky::new(schur)?.solve(&rhs);
        let mut step = DVector::zeros(g.len());
        for (i, &c) in self.kept.iter().enumerate() {
            step[c] = kept_step[i];
        }
        for (&(off, d), (inv, coupling)) in self.eliminated.iter().zip(&inverses) {
            let local = inv * (-g.rows(off, d) - coupling.transpose() * &kept_step);
            step.rows_mut(off, d).copy_from(&local);
        }
        Some(step)
    }
}

/// Minimizes `½‖r‖²`, updating `problem.blocks` in place.
pub fn solve_nlls<R: Residuals>(problem: &mut NllsProblem<R>, options: &SolveOptions) -> Result<SolveReport> {
    let layout = Layout::new(&problem.blocks);
    let evaluated = problem.residuals.evaluate(&problem.blocks, true);
    let plan = SchurPlan::new(&problem.blocks, &evaluated, &layout);
    let mut lin = linearize(&problem.blocks, &evaluated, &layout).ok_or(Error::InvalidStart)?;

    let initial_cost = lin.cost;
    let mut history = vec![initial_cost];
    let mut damping = options.initial_damping;
    let finish = |termination: Termination, iterations: usize, history: Vec<f64>| SolveReport {
        converged: termination != Termination::MaxIterations,
        iterations,
        initial_cost,
        final_cost: *history.last().unwrap_or(&initial_cost),
        termination,
        cost_history: history,
    };

    for iteration in 0..options.max_iterations {
        if layout.dim == 0 || lin.gradient.amax() <= options.gradient_tol {
            return Ok(finish(Termination::GradientTolerance, iteration, history));
        }
        let (candidate, candidate_lin, predicted) = loop {
            let Some(delta) = damped_solve(&lin, damping, plan.as_ref()) else {
                damping = raise(damping, options);
                if damping > MAX_DAMPING {
                    return Err(Error::Stalled { damping });
                }
                continue;
            };
            let x_norm = parameter_norm(&problem.blocks);
            if delta.norm() <= options.step_tol * (x_norm + options.step_tol) {
                return Ok(finish(Termination::StepTolerance, iteration, history));
            }
            let candidate = apply_step(&problem.blocks, &layout, &delta);
            let evaluated = problem.residuals.evaluate(&candidate, true);
            match linearize(&candidate, &evaluated, &layout) {
                Some(next) if next.cost < lin.cost => {
                    let predicted = -(lin.gradient.dot(&delta) + 0.5 * delta.dot(&(&lin.hessian * &delta)));
                    break (candidate, next, predicted);
                }
                _ => {
                    damping = raise(damping, options);
                    if damping > MAX_DAMPING {
                        return Err(Error::Stalled { damping });
                    }
                }
            }
        };
        let decrease = lin.cost - candidate_lin.cost;
        let previous = lin.cost;
        problem.blocks = candidate;
        lin = candidate_lin;
        history.push(lin.cost);
        // an exact quadratic model means the next step can be pure Gauss-Newton
        let gain = decrease / predicted;
        damping = if (gain - 1.0).abs() < 1e-3 {
            0.0
        } else {
            (damping * options.damping_down).max(MIN_DAMPING)
        };
        if decrease <= options.cost_tol * previous {
            return Ok(finish(Termination::CostTolerance, iteration + 1, history));
        }
    }
    Ok(finish(Termination::MaxIterations, options.max_iterations, history))
}

/// Dense analytic Jacobian over the non-frozen tangent columns.
pub fn analytic_jacobian<R: Residuals>(problem: &NllsProblem<R>) -> DMatrix<f64> {
    let layout = Layout::new(&problem.blocks);
    let evaluated = problem.residuals.evaluate(&problem.blocks, true);
    let rows: usize = evaluated.iter().map(|b| b.residuals.len()).sum();
    let mut jac = DMatrix::zeros(rows, layout.dim);
    let mut row0 = 0;
    for rb in &evaluated {
        let rows = rb.residuals.len();
        for j in &rb.jacobians {
            let Some(off) = layout.offsets[j.block] else {
                continue;
            };
            let d = problem.blocks[j.block].tangent_dim();
            for r in 0..rows {
                for c in 0..d {
                    jac[(row0 + r, off + c)] += j.values[r * d + c];
                }
            }
        }
        row0 += rows;
    }
    jac
}

/// Central-difference Jacobian over the non-frozen tangent columns.
pub fn numeric_jacobian<R: Residuals>(problem: &NllsProblem<R>, step: f64) -> DMatrix<f64> {
    let layout = Layout::new(&problem.blocks);
    let rows = problem.residual_vector().len();
    let mut jac = DMatrix::zeros(rows, layout.dim);
    for (bi, off) in layout.offsets.iter().enumerate() {
        let Some(off) = off else { continue };
        let d = problem.blocks[bi].tangent_dim();
        for c in 0..d {
            let mut e = vec![0.0; d];
            let mut plus = problem.blocks.clone();
            e[c] = step;
            plus[bi].retract(&e);
            let mut minus = problem.blocks.clone();
            e[c] = -step;
            minus[bi].retract(&e);
            let rp = stack(&problem.residuals.evaluate(&plus, false));
            let rm = stack(&problem.residuals.evaluate(&minus, false));
            jac.set_column(off + c, &((rp - rm) / (2.0 * step)));
        }
    }
    jac
}

/// One damped step at the current point, for inspecting LM behavior.
pub fn damped_step<R: Residuals>(problem: &NllsProblem<R>, damping: f64) -> Option<DVector<f64>> {
    let layout = Layout::new(&problem.blocks);
    let lin = linearize(
        &problem.blocks,
        &problem.residuals.evaluate(&problem.blocks, true),
        &layout,
    )?;
    damped_solve(&lin, damping, None)
}

/// Gradient `Jᵀr` over the non-frozen tangent columns.
pub fn gradient<R: Residuals>(problem: &NllsProblem<R>) -> Option<DVector<f64>> {
    let layout = Layout::new(&problem.blocks);
    linearize(
        &problem.blocks,
        &problem.residuals.evaluate(&problem.blocks, true),
        &layout,
    )
    .map(|l| l.gradient)
}
