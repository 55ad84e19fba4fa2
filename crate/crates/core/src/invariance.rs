//! Closed convex sets in H, their projections, the sampled invariance
//! criteria and trajectory audits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forms::{coercivity, FormFamily, StepForm};
use crate::mr::fmt_f64;
use crate::propagator::{ProblemData, Trajectory};
use crate::space::{GalerkinSpace, Quadratic};

/// Projected-gradient tolerance for boxes under a non-diagonal metric.
pub const QP_TOL: f64 = 1e-10;
const QP_MAX_ITER: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub enum SetKind {
    /// `lower ≤ x ≤ upper` nodewise; bounds may be infinite.
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// `(normal | x)_H ≤ offset`.
    Halfspace { normal: DVector<f64>, offset: f64 },
    /// `‖x − center‖_H ≤ radius`.
    Ball { center: DVector<f64>, radius: f64 },
}

impl SetKind {
    pub fn name(&self) -> &'static str {
        match self {
            SetKind::Box { .. } => "box",
            SetKind::Halfspace { .. } => "halfspace",
            SetKind::Ball { .. } => "ball",
        }
    }
}

/// A closed convex subset of the Galerkin space, with the H-Gram matrix used
/// for projections.
#[derive(Clone, Debug)]
pub struct ConvexSet {
    kind: SetKind,
    metric: DMatrix<f64>,
    diagonal: bool,
}

impl ConvexSet {
    pub fn new(kind: SetKind, metric: DMatrix<f64>) -> Result<Self> {
        let n = metric.nrows();
        let check = |len: usize| if len == n { Ok(()) } else { Err(Error::Dimension { expected: n, got: len }) };
        match &kind {
            SetKind::Box { lower, upper } => {
                check(lower.len())?;
                check(upper.len())?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
                    return Err(Error::Argument("box with lower > upper".into()));
                }
            }
            SetKind::Halfspace { normal, offset } => {
                check(normal.len())?;
                if normal.iter().all(|&x| x == 0.0) || !offset.is_finite() {
                    return Err(Error::Argument("degenerate halfspace".into()));
                }
            }
            SetKind::Ball { center, radius } => {
                check(center.len())?;
                if !(*radius >= 0.0 && radius.is_finite()) {
                    return Err(Error::Argument(format!("ball radius {radius}")));
                }
            }
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || metric[(i, j)] == 0.0));
        Ok(ConvexSet { kind, metric, diagonal })
    }

    /// `{u : u ≥ 0}` nodewise, projected in the H-metric of `space`.
    pub fn nonnegative(space: &GalerkinSpace) -> Self {
        let n = space.dim();
        let kind = SetKind::Box { lower: DVector::zeros(n), upper: DVector::from_element(n, f64::INFINITY) };
        ConvexSet::new(kind, space.gram_h().clone()).expect("valid box")
    }

    /// The whole space, as an empty-constraint box.
    pub fn whole(space: &GalerkinSpace) -> Self {
        let n = space.dim();
        let kind = SetKind::Box {
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        };
        ConvexSet::new(kind, space.gram_h().clone()).expect("valid box")
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }

    fn norm(&self, x: &DVector<f64>) -> f64 {
        self.metric.dot_quadratic(x).max(0.0).sqrt()
    }

    fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.metric * y))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match &self.kind {
            SetKind::Box { lower, upper } => {
                x.iter().zip(lower.iter().zip(upper.iter())).all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            }
            SetKind::Halfspace { normal, offset } => self.inner(normal, x) <= offset + tol,
            SetKind::Ball { center, radius } => self.norm(&(x - center)) <= radius + tol,
        }
    }

    /// H-orthogonal projection.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        match &self.kind {
            SetKind::Box { lower, upper } => {
                if self.diagonal {
                    Ok(clamp(x, lower, upper))
                } else {
                    self.project_box_qp(x, lower, upper)
                }
            }
            SetKind::Halfspace { normal, offset } => {
                let excess = self.inner(normal, x) - offset;
                if excess <= 0.0 {
                    Ok(x.clone())
                } else {
                    Ok(x - normal * (excess / self.inner(normal, normal)))
                }
            }
            SetKind::Ball { center, radius } => {
                let d = x - center;
                let r = self.norm(&d);
                if r <= *radius {
                    Ok(x.clone())
                } else {
                    Ok(center + d * (radius / r))
                }
            }
        }
    }

    /// Accelerated projected gradient for `min ½(y−x)ᵀG(y−x)` over the box.
    fn project_box_qp(&self, x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<DVector<f64>> {
        let g = &self.metric;
        let lipschitz = g.symmetric_eigenvalues().max();
        let step = 1.0 / lipschitz;
        let scale = x.amax().max(1.0);
        let mut y = clamp(x, lower, upper);
        let mut z = y.clone();
        let mut momentum: f64 = 1.0;
        let mut residual = f64::INFINITY;
        for _ in 0..QP_MAX_ITER {
            let grad = g * (&z - x);
            let next = clamp(&(&z - grad * step), lower, upper);
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            z = &next + (&next - &y) * ((momentum - 1.0) / m_next);
            momentum = m_next;
            // fixed-point residual of the plain projected-gradient map at `next`
            let plain = clamp(&(&next - g * (&next - x) * step), lower, upper);
            residual = (&plain - &next).amax() / scale;
            y = next;
            if residual <= QP_TOL {
                return Ok(y);
            }
        }
        Err(Error::Tolerance { iterations: QP_MAX_ITER, residual })
    }
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(x.len(), x.iter().zip(lower.iter().zip(upper.iter())).map(|(v, (l, u))| v.max(*l).min(*u)))
}

/// Smallest sampled margin together with its witness.
#[derive(Clone, Debug, PartialEq)]
pub struct CriterionReport {
    pub margin: f64,
    pub witness_t: f64,
    pub witness: DVector<f64>,
    pub samples: usize,
}

impl CriterionReport {
    pub fn witness_norm(&self, space: &GalerkinSpace) -> f64 {
        space.norm_h(&self.witness)
    }
}

/// Test vectors: Gaussian, sparse `±` spikes and perturbations of boundary
/// points, in rotation.
pub fn sample_pool(set: &ConvexSet, n_vectors: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let n = set.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gaussian = |rng: &mut ChaCha8Rng| DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let mut pool = Vec::with_capacity(n_vectors);
    for i in 0..n_vectors {
        let v = match i % 3 {
            0 => gaussian(&mut rng),
            1 => {
                let mut v = DVector::zeros(n);
                for _ in 0..rng.random_range(1..=3.min(n)) {
                    let k = rng.random_range(0..n);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    v[k] = sign * rng.random_range(0.5..2.0);
                }
                v
            }
            _ => {
                let g = gaussian(&mut rng);
                let base = set.project(&g)?;
                base + gaussian(&mut rng) * 1e-3
            }
        };
        pool.push(v);
    }
    Ok(pool)
}

/// Minimum of `term(a, v)` over a sample pool, with deterministic
/// tie-breaking so the result does not depend on scheduling.
fn sampled_min<F>(
    matrices: &[(f64, DMatrix<f64>)],
    pool: &[(DVector<f64>, DVector<f64>)],
    term: F,
) -> CriterionReport
where
    F: Fn(f64, &DMatrix<f64>, &DVector<f64>, &DVector<f64>) -> f64 + Sync,
{
    let best = matrices
        .par_iter()
        .enumerate()
        .map(|(ti, (t, a))| {
            let mut best = (f64::INFINITY, ti, 0usize);
            for (vi, (v, pv)) in pool.iter().enumerate() {
                let m = term(*t, a, v, pv);
                if m < best.0 {
                    best = (m, ti, vi);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX),
            |x, y| if (y.0, y.1, y.2) < (x.0, x.1, x.2) { y } else { x },
        );
    let (margin, ti, vi) = best;
    if ti == usize::MAX || vi >= pool.len() {
        return CriterionReport { margin: 0.0, witness_t: f64::NAN, witness: DVector::zeros(0), samples: 0 };
    }
    CriterionReport {
        margin,
        witness_t: matrices[ti].0,
        witness: pool[vi].0.clone(),
        samples: matrices.len() * pool.len(),
    }
}

fn projected_pool(set: &ConvexSet, n_vectors: usize, seed: u64) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    sample_pool(set, n_vectors, seed)?
        .into_iter()
        .map(|v| {
            let pv = set.project(&v)?;
            Ok((v, pv))
        })
        .collect()
}

fn sampled_matrices(family: &FormFamily, t_samples: &[f64]) -> Result<Vec<(f64, DMatrix<f64>)>> {
    t_samples.iter().map(|&t| Ok((t, family.matrix(t)?))).collect()
}

fn check_compatible(space: &GalerkinSpace, set: &ConvexSet) -> Result<()> {
    if set.dim() != space.dim() {
        return Err(Error::Dimension { expected: space.dim(), got: set.dim() });
    }
    Ok(())
}

fn criterion_term(a: &DMatrix<f64>, v: &DVector<f64>, pv: &DVector<f64>) -> f64 {
    // a(t; Pv, v − Pv) = (v − Pv)ᵀ A Pv
    (v - pv).dot(&(a * pv))
}

/// `min a(t; Pv, v − Pv)` over `t_samples × pool`.
pub fn check_criterion(
    family: &FormFamily,
    set: &ConvexSet,
    t_samples: &[f64],
    n_vectors: usize,
    seed: u64,
) -> Result<CriterionReport> {
    check_compatible(family.space(), set)?;
    let matrices = sampled_matrices(family, t_samples)?;
    let pool = projected_pool(set, n_vectors, seed)?;
    Ok(sampled_min(&matrices, &pool, |_, a, v, pv| criterion_term(a, v, pv)))
}

/// The inhomogeneous variant `min a(t; Pv, v − Pv) − ⟨f(t), v − Pv⟩`.
pub fn check_criterion_with_load(
    problem: &ProblemData,
    set: &ConvexSet,
    t_samples: &[f64],
    n_vectors: usize,
    seed: u64,
) -> Result<CriterionReport> {
    check_compatible(problem.space(), set)?;
    let matrices = sampled_matrices(&problem.family, t_samples)?;
    let loads: Vec<DVector<f64>> = t_samples.iter().map(|&t| Ok(problem.load_at(t)?.0)).collect::<Result<_>>()?;
    let pool = projected_pool(set, n_vectors, seed)?;
    let index = |t: f64| t_samples.iter().position(|&s| s == t).unwrap();
    Ok(sampled_min(&matrices, &pool, |t, a, v, pv| criterion_term(a, v, pv) - loads[index(t)].dot(&(v - pv))))
}

/// The criterion for the slab-averaged forms of a step form, each attributed
/// to its slab midpoint.
pub fn check_criterion_step_form(step_form: &StepForm, set: &ConvexSet, n_vectors: usize, seed: u64) -> Result<CriterionReport> {
    check_compatible(step_form.space(), set)?;
    let sub = step_form.subdivision();
    let matrices: Vec<(f64, DMatrix<f64>)> = (0..sub.n_slabs())
        .map(|k| {
            let (a, b) = sub.slab(k);
            (0.5 * (a + b), step_form.slabs()[k].clone())
        })
        .collect();
    let pool = projected_pool(set, n_vectors, seed)?;
    Ok(sampled_min(&matrices, &pool, |_, a, v, pv| criterion_term(a, v, pv)))
}

/// `min a(t; v, v) − a(t; Pv, Pv)` for symmetric accretive families.
pub fn check_criterion_symmetric(
    family: &FormFamily,
    set: &ConvexSet,
    t_samples: &[f64],
    n_vectors: usize,
    seed: u64,
) -> Result<CriterionReport> {
    check_compatible(family.space(), set)?;
    if !family.is_symmetric() {
        return Err(Error::Contract("symmetric criterion needs a symmetric family".into()));
    }
    let alpha = coercivity(family.space(), &family.matrix(0.0)?, 0.0)?;
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("symmetric criterion needs an accretive family (α(0) = {alpha})")));
    }
    let matrices = sampled_matrices(family, t_samples)?;
    let pool = projected_pool(set, n_vectors, seed)?;
    Ok(sampled_min(&matrices, &pool, |_, a, v, pv| a.dot_quadratic(v) - a.dot_quadratic(pv)))
}

/// Largest off-diagonal entry of `A(t)` over the samples.
///
/// For the nonnegativity box with a diagonal metric,
/// `a(t; Pv, v − Pv) = Σ_{i≠j} (v − Pv)ᵢ Aᵢⱼ (Pv)ⱼ` with `(v − Pv)ᵢ ≤ 0 ≤ (Pv)ⱼ`,
/// so the criterion holds for every `v` exactly when this value is `≤ 0`
/// (take `v = eⱼ − eᵢ` for the converse).
pub fn max_off_diagonal(family: &FormFamily, t_samples: &[f64]) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for &t in t_samples {
        let a = family.matrix(t)?;
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if i != j {
                    worst = worst.max(a[(i, j)]);
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub worst: f64,
    pub t: f64,
}

/// `max ‖u(t) − Pu(t)‖_H` over the output grid.
pub fn audit_trajectory(traj: &Trajectory, set: &ConvexSet) -> Result<Violation> {
    check_compatible(traj.space(), set)?;
    let mut out = Violation { worst: 0.0, t: traj.grid()[0] };
    for (&t, u) in traj.grid().iter().zip(traj.states()) {
        let d = traj.space().norm_h(&(u - set.project(u)?));
        if d > out.worst {
            out = Violation { worst: d, t };
        }
    }
    Ok(out)
}

pub const INVARIANCE_CSV_HEADER: &str =
    "preset,set_kind,metric,criterion_margin,symmetric_margin,worst_violation,witness_t,witness_norm";

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceRow {
    pub preset: String,
    pub set_kind: String,
    pub metric: String,
    pub criterion_margin: f64,
    pub symmetric_margin: Option<f64>,
    pub worst_violation: f64,
    pub witness_t: f64,
    pub witness_norm: f64,
}

impl InvarianceRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.preset,
            self.set_kind,
            self.metric,
            fmt_f64(self.criterion_margin),
            fmt_f64(self.symmetric_margin.unwrap_or(f64::NAN)),
            fmt_f64(self.worst_violation),
            fmt_f64(self.witness_t),
            fmt_f64(self.witness_norm),
        )
    }
}
