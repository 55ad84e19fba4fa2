//! Slab semigroups, the ordered product `P_Λ(a, b)`, the frozen-coefficient
//! solve and an implicit-Euler reference solver.
//!
//! On slab `k` the step problem is autonomous, `u̇ + Bₖ u = f̄ₖ` with
//! `Bₖ = G_H⁻¹ Aₖ` and the slab-averaged load `f̄ₖ` (H-coordinates), so the
//! state at offset `s` is `e^{−sBₖ} u(λₖ) + s φ₁(−sBₖ) f̄ₖ` exactly.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forms::{self, FormFamily, StepForm, Subdivision, AVERAGE_PANELS};
use crate::linalg::{self, composite_gauss, phi1};
use crate::space::{DualVector, GalerkinSpace};

pub type LoadFn = Arc<dyn Fn(f64) -> DualVector + Send + Sync>;

#[derive(Clone, Debug)]
enum Kernel {
    /// `Bₖ = W diag(λ) Wᵀ G_H` with `Wᵀ G_H W = I`.
    Spectral { values: DVector<f64>, vectors: DMatrix<f64>, left: DMatrix<f64> },
    /// Scaling-and-squaring Padé on the augmented generator.
    Pade,
}

/// Semigroup `s ↦ e^{−sBₖ}` of one slab together with its load response.
#[derive(Clone, Debug)]
pub struct SlabPropagator {
    generator: DMatrix<f64>,
    kernel: Kernel,
    start: f64,
    end: f64,
    stiffness: f64,
    conditioning: f64,
}

impl SlabPropagator {
    /// Spectral route when `symmetric` (pencil `(Aₖ, G_H)`), Padé otherwise.
    pub fn new(space: &GalerkinSpace, a: &DMatrix<f64>, start: f64, end: f64, symmetric: bool) -> Result<Self> {
        if !(start < end) {
            return Err(Error::Argument(format!("invalid slab [{start}, {end}]")));
        }
        let generator = space.chol_h().solve(a);
        let h_eigs = space.gram_h().symmetric_eigenvalues();
        let (lo, hi) = h_eigs.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        let conditioning = (hi / lo).sqrt();
        let (kernel, stiffness) = if symmetric {
            let eig = linalg::pencil_eigen(&linalg::symmetric_part(a), space.chol_h())?;
            let stiffness = eig.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let left = eig.vectors.transpose() * space.gram_h();
            (Kernel::Spectral { values: eig.values, vectors: eig.vectors, left }, stiffness)
        } else {
            let stiffness = generator
                .column_iter()
                .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            (Kernel::Pade, stiffness)
        };
        Ok(SlabPropagator { generator, kernel, start, end, stiffness, conditioning })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// `Bₖ = G_H⁻¹ Aₖ`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Bound on the spectral radius of `Bₖ` (exact on the spectral route).
    pub fn stiffness(&self) -> f64 {
        self.stiffness
    }

    /// `κ` with `‖e^{−sBₖ}‖₂ ≤ κ e^{ωs}`: `sqrt(cond₂ G_H)`.
    pub fn conditioning(&self) -> f64 {
        self.conditioning
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self.kernel, Kernel::Spectral { .. })
    }

    /// `e^{−sBₖ}` as a matrix.
    pub fn semigroup(&self, s: f64) -> Result<DMatrix<f64>> {
        match &self.kernel {
            Kernel::Spectral { values, vectors, left } => {
                let decay = values.map(|l| (-l * s).exp());
                if decay.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericalRange { norm: self.stiffness * s });
                }
                Ok(vectors * DMatrix::from_diagonal(&decay) * left)
            }
            Kernel::Pade => linalg::expm(&(&self.generator * (-s))),
        }
    }

    /// `e^{−sBₖ} u + s φ₁(−sBₖ) f̄`.
    pub fn evolve(&self, u: &DVector<f64>, load: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
        if s == 0.0 {
            return Ok(u.clone());
        }
        match &self.kernel {
            Kernel::Spectral { values, vectors, left } => {
                let c0 = left * u;
                let g = left * load;
                let mut c = DVector::zeros(c0.len());
                for j in 0..c0.len() {
                    let z = -values[j] * s;
                    c[j] = z.exp() * c0[j] + s * phi1(z) * g[j];
                }
                if c.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NumericalRange { norm: self.stiffness * s });
                }
                Ok(vectors * c)
            }
            Kernel::Pade => {
                let n = u.len();
                let mut aug = DMatrix::zeros(n + 1, n + 1);
                aug.view_mut((0, 0), (n, n)).copy_from(&(&self.generator * (-s)));
                aug.view_mut((0, n), (n, 1)).copy_from(&(load * s));
                let e = linalg::expm(&aug)?;
                let mut z = DVector::zeros(n + 1);
                z.rows_mut(0, n).copy_from(u);
                z[n] = 1.0;
                Ok((e * z).rows(0, n).into_owned())
            }
        }
    }

    /// `u̇ = f̄ − Bₖ u`.
    pub fn velocity(&self, u: &DVector<f64>, load: &DVector<f64>) -> DVector<f64> {
        load - &self.generator * u
    }
}

/// One slab step by variation of constants: `e^{−hB} u + h φ₁(−hB) f̄`.
pub fn slab_step(
    propagator: &SlabPropagator,
    u_in: &DVector<f64>,
    load: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    if !(h >= 0.0 && h <= propagator.len() * (1.0 + 1e-12)) {
        return Err(Error::Argument(format!("step {h} outside slab of length {}", propagator.len())));
    }
    propagator.evolve(u_in, load, h)
}

/// Slab propagators of a step form, cached for repeated products.
#[derive(Clone, Debug)]
pub struct ProductPropagator {
    subdivision: Subdivision,
    slabs: Vec<Arc<SlabPropagator>>,
}

impl ProductPropagator {
    pub fn new(step_form: &StepForm) -> Result<Self> {
        let sub = step_form.subdivision();
        let slabs = step_form
            .slabs()
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let (lo, hi) = sub.slab(k);
                SlabPropagator::new(step_form.space(), a, lo, hi, step_form.is_symmetric()).map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductPropagator { subdivision: sub.clone(), slabs })
    }

    pub fn slabs(&self) -> &[Arc<SlabPropagator>] {
        &self.slabs
    }

    /// `P_Λ(a, b)`: ordered composition of slab semigroups from `a` to `b`.
    pub fn product(&self, a: f64, b: f64) -> Result<DMatrix<f64>> {
        let horizon = self.subdivision.horizon();
        if !(0.0 <= a && a <= b && b <= horizon) {
            return Err(Error::Argument(format!("need 0 ≤ a ≤ b ≤ T, got a = {a}, b = {b}")));
        }
        let first = self.subdivision.locate(a);
        let last = self.subdivision.locate(b);
        if first == last {
            return self.slabs[first].semigroup(b - a);
        }
        let mut acc = self.slabs[first].semigroup(self.slabs[first].end() - a)?;
        for k in first + 1..last {
            acc = self.slabs[k].semigroup(self.slabs[k].len())? * acc;
        }
        Ok(self.slabs[last].semigroup(b - self.slabs[last].start())? * acc)
    }
}

pub fn product(step_form: &StepForm, a: f64, b: f64) -> Result<DMatrix<f64>> {
    ProductPropagator::new(step_form)?.product(a, b)
}

#[derive(Clone)]
pub struct ProblemData {
    pub family: FormFamily,
    pub u0: DVector<f64>,
    /// Pairings `⟨f(t), φᵢ⟩`; `None` means `f = 0`.
    pub load: Option<LoadFn>,
}

impl fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemData")
            .field("family", &self.family)
            .field("u0", &self.u0)
            .field("load", &self.load.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

impl ProblemData {
    pub fn new(family: FormFamily, u0: DVector<f64>, load: Option<LoadFn>) -> Result<Self> {
        let n = family.space().dim();
        if u0.len() != n {
            return Err(Error::Dimension { expected: n, got: u0.len() });
        }
        if u0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("initial state has non-finite entries".into()));
        }
        Ok(ProblemData { family, u0, load })
    }

    pub fn horizon(&self) -> f64 {
        self.family.horizon()
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        self.family.space()
    }

    pub fn load_at(&self, t: f64) -> Result<DualVector> {
        let n = self.space().dim();
        let g = match &self.load {
            Some(f) => f(t),
            None => DualVector::zeros(n),
        };
        if g.0.len() != n {
            return Err(Error::Dimension { expected: n, got: g.0.len() });
        }
        if g.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { t });
        }
        Ok(g)
    }

    /// Slab average of the load in H-coordinates, `G_H⁻¹ (1/h)∫F`.
    pub fn average_load(&self, a: f64, b: f64) -> Result<DVector<f64>> {
        let n = self.space().dim();
        if self.load.is_none() {
            return Ok(DVector::zeros(n));
        }
        let mut acc = DVector::zeros(n);
        for (t, w) in composite_gauss(a, b, AVERAGE_PANELS) {
            acc += self.load_at(t)?.0 * w;
        }
        Ok(self.space().chol_h().solve(&(acc / (b - a))))
    }

    /// Same problem with `a + ω(·|·)` and load `e^{−ωt} f`.
    pub fn rescaled(&self, omega: f64) -> ProblemData {
        let load = self.load.clone().map(|f| {
            let g: LoadFn = Arc::new(move |t| DualVector(f(t).0 * (-omega * t).exp()));
            g
        });
        ProblemData { family: self.family.rescale(omega), u0: self.u0.clone(), load }
    }
}

/// Slab metadata of a frozen-coefficient trajectory.
#[derive(Clone, Debug)]
pub struct SlabRecord {
    pub state: DVector<f64>,
    /// Averaged load `f̄ₖ` in H-coordinates.
    pub load: DVector<f64>,
    pub propagator: Arc<SlabPropagator>,
}

impl SlabRecord {
    pub fn start(&self) -> f64 {
        self.propagator.start()
    }

    pub fn end(&self) -> f64 {
        self.propagator.end()
    }

    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.propagator.evolve(&self.state, &self.load, t - self.start())
    }

    pub fn velocity(&self, u: &DVector<f64>) -> DVector<f64> {
        self.propagator.velocity(u, &self.load)
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    space: Arc<GalerkinSpace>,
    grid: Vec<f64>,
    states: Vec<DVector<f64>>,
    slabs: Vec<SlabRecord>,
    tag: String,
}

impl Trajectory {
    pub fn space(&self) -> &Arc<GalerkinSpace> {
        &self.space
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn slabs(&self) -> &[SlabRecord] {
        &self.slabs
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn horizon(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    pub fn has_metadata(&self) -> bool {
        !self.slabs.is_empty()
    }

    pub(crate) fn require_metadata(&self) -> Result<()> {
        if self.has_metadata() {
            Ok(())
        } else {
            Err(Error::Contract(format!("trajectory `{}` has no slab metadata", self.tag)))
        }
    }

    /// Index of the slab containing `t` (right-continuous, `T` in the last slab).
    pub fn slab_index(&self, t: f64) -> usize {
        let n = self.slabs.len();
        let k = self.slabs.partition_point(|s| s.start() <= t);
        k.saturating_sub(1).min(n - 1)
    }

    /// Exact state of the step problem at any `t ∈ [0, T]`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        self.require_metadata()?;
        self.slabs[self.slab_index(t)].eval(t)
    }

    /// `u̇(t)` from the slab equation (right derivative at breakpoints).
    pub fn velocity(&self, t: f64) -> Result<DVector<f64>> {
        self.require_metadata()?;
        let slab = &self.slabs[self.slab_index(t)];
        Ok(slab.velocity(&slab.eval(t)?))
    }
}

fn normalize_grid(grid: &[f64], horizon: f64) -> Result<Vec<f64>> {
    if let Some(&t) = grid.iter().find(|t| !(**t >= 0.0 && **t <= horizon)) {
        return Err(Error::Argument(format!("output time {t} outside [0, {horizon}]")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("output grid must be strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(grid.len() + 2);
    if grid.first().map_or(true, |&t| t > 0.0) {
        out.push(0.0);
    }
    out.extend_from_slice(grid);
    if out[out.len() - 1] < horizon {
        out.push(horizon);
    }
    Ok(out)
}

/// Frozen-coefficient solve on `subdivision`, sampled on `output_grid`
/// (0 and T are added when missing).
pub fn solve(problem: &ProblemData, subdivision: &Subdivision, output_grid: &[f64]) -> Result<Trajectory> {
    let step_form = forms::build_step_form(&problem.family, subdivision)?;
    solve_step_form(problem, &step_form, output_grid)
}

pub fn solve_step_form(problem: &ProblemData, step_form: &StepForm, output_grid: &[f64]) -> Result<Trajectory> {
    let horizon = problem.horizon();
    let grid = normalize_grid(output_grid, horizon)?;
    let propagators = ProductPropagator::new(step_form)?;
    let mut slabs = Vec::with_capacity(propagators.slabs().len());
    let mut state = problem.u0.clone();
    for propagator in propagators.slabs() {
        let load = problem.average_load(propagator.start(), propagator.end())?;
        let next = slab_step(propagator, &state, &load, propagator.len())?;
        slabs.push(SlabRecord { state, load, propagator: propagator.clone() });
        state = next;
    }
    let mut traj = Trajectory {
        space: problem.space().clone(),
        grid: Vec::new(),
        states: Vec::new(),
        slabs,
        tag: format!("frozen-{}", step_form.subdivision().n_slabs()),
    };
    let states = grid.iter().map(|&t| traj.eval(t)).collect::<Result<Vec<_>>>()?;
    traj.grid = grid;
    traj.states = states;
    Ok(traj)
}

/// Recorded points of an oracle run are capped at roughly this many.
pub const ORACLE_RECORDS: usize = 1024;

/// Implicit Euler with `steps` uniform steps, `A` and `f` at the right
/// endpoint. Records every `⌈steps/1024⌉`-th state plus the final one.
pub fn oracle_solve(problem: &ProblemData, steps: usize) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Argument("oracle needs at least one step".into()));
    }
    let space = problem.space();
    let horizon = problem.horizon();
    let dt = horizon / steps as f64;
    let stride = steps.div_ceil(ORACLE_RECORDS);
    let mut grid = vec![0.0];
    let mut states = vec![problem.u0.clone()];
    let mut u = problem.u0.clone();
    for n in 1..=steps {
        let t = if n == steps { horizon } else { dt * n as f64 };
        let lhs = space.gram_h() + problem.family.matrix(t)? * dt;
        let rhs = space.gram_h() * &u + problem.load_at(t)?.0 * dt;
        u = lhs.lu().solve(&rhs).ok_or(Error::SingularGram)?;
        if n % stride == 0 || n == steps {
            grid.push(t);
            states.push(u.clone());
        }
    }
    Ok(Trajectory {
        space: space.clone(),
        grid,
        states,
        slabs: Vec::new(),
        tag: format!("oracle-euler-{steps}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::build_step_form;
    use approx::assert_relative_eq;

    fn unit_space(dim: usize) -> Arc<GalerkinSpace> {
        Arc::new(GalerkinSpace::new(DMatrix::identity(dim, dim), DMatrix::identity(dim, dim)).unwrap())
    }

    fn scalar_problem(p: impl Fn(f64) -> f64 + Send + Sync + 'static, u0: f64) -> ProblemData {
        let fam = FormFamily::new(unit_space(1), 1.0, true, move |t| DMatrix::from_element(1, 1, p(t))).unwrap();
        ProblemData::new(fam, DVector::from_element(1, u0), None).unwrap()
    }

    fn scalar_propagator(b: f64, symmetric: bool) -> SlabPropagator {
        SlabPropagator::new(&unit_space(1), &DMatrix::from_element(1, 1, b), 0.0, 1.0, symmetric).unwrap()
    }

    #[test]
    fn slab_step_zero_generator() {
        for sym in [true, false] {
            let p = scalar_propagator(0.0, sym);
            let u = slab_step(&p, &DVector::from_element(1, 2.0), &DVector::from_element(1, 3.0), 0.5).unwrap();
            assert_relative_eq!(u[0], 3.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn slab_step_scalar_decay_and_load() {
        for sym in [true, false] {
            let p = scalar_propagator(1.0, sym);
            let one = DVector::from_element(1, 1.0);
            let zero = DVector::zeros(1);
            let u = slab_step(&p, &one, &zero, 1.0).unwrap();
            assert_relative_eq!(u[0], 0.3678794412, epsilon = 1e-10);
            let u = slab_step(&p, &zero, &one, 1.0).unwrap();
            assert_relative_eq!(u[0], 0.6321205588, epsilon = 1e-10);
        }
    }

    #[test]
    fn slab_step_outside_slab_rejected() {
        let p = scalar_propagator(1.0, true);
        assert!(slab_step(&p, &DVector::zeros(1), &DVector::zeros(1), 1.5).is_err());
        assert!(slab_step(&p, &DVector::zeros(1), &DVector::zeros(1), -0.1).is_err());
    }

    #[test]
    fn slab_step_overflow_is_range_error() {
        let p = scalar_propagator(-1e6, false);
        let r = slab_step(&p, &DVector::from_element(1, 1.0), &DVector::zeros(1), 1.0);
        assert!(matches!(r, Err(Error::NumericalRange { .. })), "{r:?}");
    }

    #[test]
    fn spectral_and_pade_routes_agree() {
        let space = GalerkinSpace::new(
            DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0]),
            DMatrix::identity(3, 3) * 5.0,
        )
        .unwrap();
        let a = DMatrix::from_row_slice(3, 3, &[4.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 4.0]);
        let spectral = SlabPropagator::new(&space, &a, 0.0, 1.0, true).unwrap();
        let pade = SlabPropagator::new(&space, &a, 0.0, 1.0, false).unwrap();
        let u = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let f = DVector::from_vec(vec![0.3, 0.1, -0.4]);
        for &s in &[0.0, 0.01, 0.3, 1.0] {
            let x = spectral.evolve(&u, &f, s).unwrap();
            let y = pade.evolve(&u, &f, s).unwrap();
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn product_of_equal_times_is_identity() {
        let fam = FormFamily::new(unit_space(2), 1.0, true, |t| {
            DMatrix::from_row_slice(2, 2, &[1.0 + t, 0.2, 0.2, 2.0])
        })
        .unwrap();
        let sf = build_step_form(&fam, &Subdivision::uniform(1.0, 4).unwrap()).unwrap();
        for &a in &[0.0, 0.25, 0.4, 1.0] {
            assert_relative_eq!(product(&sf, a, a).unwrap(), DMatrix::identity(2, 2), epsilon = 1e-15);
        }
        assert!(matches!(product(&sf, 0.6, 0.5), Err(Error::Argument(_))));
    }

    #[test]
    fn scalar_product_telescopes() {
        let fam = FormFamily::new(unit_space(1), 1.0, true, |t| DMatrix::from_element(1, 1, t)).unwrap();
        for points in [vec![0.0, 1.0], vec![0.0, 0.3, 1.0], vec![0.0, 0.1, 0.15, 0.7, 1.0]] {
            let sf = build_step_form(&fam, &Subdivision::new(points).unwrap()).unwrap();
            assert_relative_eq!(product(&sf, 0.0, 1.0).unwrap()[(0, 0)], 0.6065306597, epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_solve_is_subdivision_independent() {
        let problem = scalar_problem(|t| 1.0 + t / 2.0, 1.0);
        for n in [1, 3, 8, 64] {
            let traj = solve(&problem, &Subdivision::uniform(1.0, n).unwrap(), &[]).unwrap();
            assert_relative_eq!(traj.states().last().unwrap()[0], (-1.25f64).exp(), epsilon = 1e-14);
            assert_relative_eq!(0.2865047969, (-1.25f64).exp(), epsilon = 1e-10);
        }
    }

    #[test]
    fn trajectory_grid_gets_endpoints() {
        let problem = scalar_problem(|_| 1.0, 1.0);
        let traj = solve(&problem, &Subdivision::uniform(1.0, 2).unwrap(), &[0.5]).unwrap();
        assert_eq!(traj.grid(), &[0.0, 0.5, 1.0]);
        assert!(solve(&problem, &Subdivision::uniform(1.0, 2).unwrap(), &[0.5, 0.4]).is_err());
        assert!(solve(&problem, &Subdivision::uniform(1.0, 2).unwrap(), &[1.5]).is_err());
    }

    #[test]
    fn oracle_trivial_and_scalar() {
        let problem = scalar_problem(|_| 0.0, 2.0);
        let traj = oracle_solve(&problem, 100).unwrap();
        assert!(traj.states().iter().all(|u| u[0] == 2.0));
        let problem = scalar_problem(|_| 1.0, 1.0);
        let traj = oracle_solve(&problem, 100_000).unwrap();
        assert_eq!(*traj.grid().last().unwrap(), 1.0);
        assert!((traj.states().last().unwrap()[0] - (-1f64).exp()).abs() <= 1e-4);
        assert!(!traj.has_metadata());
        assert!(traj.eval(0.5).is_err());
    }
}
