//! Time-dependent forms, subdivisions, slab averaging and the step form.
//!
//! A [`FormFamily`] is stored through its operator matrix `A(t)` with entries
//! `A(t)ᵢⱼ = a(t; φⱼ, φᵢ)`, i.e. `a(t; u, v) = vᵀ A(t) u`. This is the usual
//! finite-element convention (row = test function), so the Galerkin system is
//! `G_H u̇ + A(t) u = F(t)` and the slab generator is `G_H⁻¹ Aₖ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, composite_gauss};
use crate::space::GalerkinSpace;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Panels of the composite four-point Gauss rule used for slab averages.
pub const AVERAGE_PANELS: usize = 4;

const SYMMETRY_TOL: f64 = 1e-12;
const SYMMETRY_SAMPLES: usize = 33;

/// Continuity, ellipticity and Lipschitz constants of a form family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormConstants {
    /// `|a(t;u,v)| ≤ M ‖u‖_V ‖v‖_V`
    pub m: f64,
    /// `a(t;u,u) + ω‖u‖² ≥ α ‖u‖_V²`
    pub alpha: f64,
    pub omega: f64,
    /// `|a(t;u,v) − a(s;u,v)| ≤ L |t−s| ‖u‖_V ‖v‖_V`
    pub lipschitz: Option<f64>,
}

#[derive(Clone)]
pub struct FormFamily {
    space: Arc<GalerkinSpace>,
    eval: MatrixFn,
    horizon: f64,
    symmetric: bool,
    declared: Option<FormConstants>,
}

impl fmt::Debug for FormFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FormFamily")
            .field("dim", &self.space.dim())
            .field("horizon", &self.horizon)
            .field("symmetric", &self.symmetric)
            .field("declared", &self.declared)
            .finish()
    }
}

impl FormFamily {
    pub fn new(
        space: Arc<GalerkinSpace>,
        horizon: f64,
        symmetric: bool,
        eval: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
        }
        let family = FormFamily { space, eval: Arc::new(eval), horizon, symmetric, declared: None };
        for i in 0..SYMMETRY_SAMPLES {
            let t = horizon * i as f64 / (SYMMETRY_SAMPLES - 1) as f64;
            let a = family.matrix(t)?;
            if symmetric {
                let asymmetry = linalg::asymmetry(&a);
                if asymmetry > SYMMETRY_TOL {
                    return Err(Error::NotSymmetric { which: "form", asymmetry });
                }
            }
        }
        Ok(family)
    }

    /// A family that does not depend on time.
    pub fn constant(space: Arc<GalerkinSpace>, horizon: f64, a: DMatrix<f64>) -> Result<Self> {
        let symmetric = linalg::asymmetry(&a) <= SYMMETRY_TOL;
        let a = if symmetric { linalg::symmetric_part(&a) } else { a };
        Self::new(space, horizon, symmetric, move |_| a.clone())
    }

    pub fn with_declared(mut self, constants: FormConstants) -> Self {
        self.declared = Some(constants);
        self
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        &self.space
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn declared(&self) -> Option<FormConstants> {
        self.declared
    }

    /// Operator matrix `A(t)`; fails on non-finite entries.
    pub fn matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        let a = (self.eval)(t);
        let n = self.space.dim();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::Dimension { expected: n, got: a.nrows() });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { t });
        }
        Ok(a)
    }

    /// `a(t; u, v)`.
    pub fn form(&self, t: f64, u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
        Ok(v.dot(&(self.matrix(t)? * u)))
    }

    /// The family `a(t;u,v) + ω(u|v)`.
    pub fn rescale(&self, omega: f64) -> FormFamily {
        let inner = self.eval.clone();
        let shift = self.space.gram_h() * omega;
        FormFamily {
            space: self.space.clone(),
            eval: Arc::new(move |t| inner(t) + &shift),
            horizon: self.horizon,
            symmetric: self.symmetric,
            declared: self.declared.map(|c| FormConstants { omega: c.omega - omega, ..c }),
        }
    }
}

/// Free-function form of [`FormFamily::rescale`].
pub fn rescale(family: &FormFamily, omega: f64) -> FormFamily {
    family.rescale(omega)
}

/// A partition `0 = λ₀ < λ₁ < … < λ_{n+1} = T`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subdivision {
    points: Vec<f64>,
}

impl Subdivision {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Subdivision("need at least two points".into()));
        }
        if points[0] != 0.0 {
            return Err(Error::Subdivision(format!("first point must be 0, got {}", points[0])));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Subdivision("non-finite point".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Subdivision(format!("not strictly increasing at {} -> {}", w[0], w[1])));
        }
        Ok(Subdivision { points })
    }

    pub fn uniform(horizon: f64, slabs: usize) -> Result<Self> {
        if slabs == 0 {
            return Err(Error::Subdivision("need at least one slab".into()));
        }
        let mut points: Vec<f64> =
            (0..=slabs).map(|k| horizon * k as f64 / slabs as f64).collect();
        points[slabs] = horizon;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn n_slabs(&self) -> usize {
        self.points.len() - 1
    }

    pub fn slab(&self, k: usize) -> (f64, f64) {
        (self.points[k], self.points[k + 1])
    }

    /// `|Λ| = max (λ_{j+1} − λ_j)`.
    pub fn mesh(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn is_uniform(&self) -> bool {
        let n = self.n_slabs() as f64;
        let h = self.horizon() / n;
        self.points.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-12 * h.max(1.0) * n)
    }

    /// Slab index containing `t`: `λₖ ≤ t < λₖ₊₁`, and the last slab for `t = T`.
    pub fn locate(&self, t: f64) -> usize {
        let n = self.n_slabs();
        if t >= self.points[n] {
            return n - 1;
        }
        match self.points.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(k) => k.min(n - 1),
            Err(k) => k.saturating_sub(1).min(n - 1),
        }
    }
}

/// Piecewise-constant operator `𝒜_Λ` built from slab averages.
#[derive(Clone, Debug)]
pub struct StepForm {
    space: Arc<GalerkinSpace>,
    subdivision: Subdivision,
    slabs: Vec<DMatrix<f64>>,
    symmetric: bool,
}

impl StepForm {
    /// Step form from explicit slab matrices (a genuinely piecewise-constant family).
    pub fn from_slabs(
        space: Arc<GalerkinSpace>,
        subdivision: Subdivision,
        slabs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if slabs.len() != subdivision.n_slabs() {
            return Err(Error::Dimension { expected: subdivision.n_slabs(), got: slabs.len() });
        }
        let symmetric = slabs.iter().all(|a| linalg::asymmetry(a) <= SYMMETRY_TOL);
        Ok(StepForm { space, subdivision, slabs, symmetric })
    }

    pub fn space(&self) -> &Arc<GalerkinSpace> {
        &self.space
    }

    pub fn subdivision(&self) -> &Subdivision {
        &self.subdivision
    }

    pub fn slabs(&self) -> &[DMatrix<f64>] {
        &self.slabs
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// `𝒜_Λ(t)`.
    pub fn lookup(&self, t: f64) -> &DMatrix<f64> {
        &self.slabs[self.subdivision.locate(t)]
    }

    /// Smallest per-slab coercivity and largest per-slab continuity constant.
    pub fn slab_constants(&self, omega: f64) -> Result<FormConstants> {
        let mut m: f64 = 0.0;
        let mut alpha = f64::INFINITY;
        for a in &self.slabs {
            m = m.max(v_operator_norm(&self.space, a)?);
            alpha = alpha.min(coercivity(&self.space, a, omega)?);
        }
        Ok(FormConstants { m, alpha, omega, lipschitz: None })
    }
}

/// `(1/(b−a)) ∫ₐᵇ A(r) dr` by composite Gauss-Legendre quadrature.
pub fn average_form(family: &FormFamily, a: f64, b: f64) -> Result<DMatrix<f64>> {
    if !(a < b) || a < 0.0 || b > family.horizon() * (1.0 + 1e-12) {
        return Err(Error::Argument(format!("invalid slab [{a}, {b}]")));
    }
    let n = family.space().dim();
    let mut acc = DMatrix::zeros(n, n);
    for (t, w) in composite_gauss(a, b, AVERAGE_PANELS) {
        acc += family.matrix(t)? * w;
    }
    Ok(acc / (b - a))
}

pub fn build_step_form(family: &FormFamily, subdivision: &Subdivision) -> Result<StepForm> {
    if (subdivision.horizon() - family.horizon()).abs() > 1e-12 * family.horizon() {
        return Err(Error::Subdivision(format!(
            "subdivision ends at {}, family horizon is {}",
            subdivision.horizon(),
            family.horizon()
        )));
    }
    let slabs = (0..subdivision.n_slabs())
        .map(|k| {
            let (a, b) = subdivision.slab(k);
            let avg = average_form(family, a, b)?;
            Ok(if family.is_symmetric() { linalg::symmetric_part(&avg) } else { avg })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepForm {
        space: family.space().clone(),
        subdivision: subdivision.clone(),
        slabs,
        symmetric: family.is_symmetric(),
    })
}

/// `‖A‖_{V→V′}`: largest singular value of `L⁻¹ A L⁻ᵀ` with `G_V = L Lᵀ`.
pub fn v_operator_norm(space: &GalerkinSpace, a: &DMatrix<f64>) -> Result<f64> {
    let l = space.chol_v().l();
    let y = l.solve_lower_triangular(a).ok_or(Error::SingularGram)?;
    let c = l.solve_lower_triangular(&y.transpose()).ok_or(Error::SingularGram)?;
    let sv = c.singular_values();
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

/// Smallest eigenvalue of the pencil `(sym(A) + ω G_H, G_V)`.
pub fn coercivity(space: &GalerkinSpace, a: &DMatrix<f64>, omega: f64) -> Result<f64> {
    let shifted = linalg::symmetric_part(a) + space.gram_h() * omega;
    let values = linalg::pencil_eigenvalues(&shifted, space.chol_v())?;
    Ok(values[0])
}

/// Constants certified on the sample grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantsEstimate {
    pub constants: FormConstants,
    /// `α(ω) > 0` on every sample.
    pub elliptic: bool,
    pub samples: usize,
}

pub const MIN_CONSTANT_SAMPLES: usize = 33;

/// Sample-certified `M`, `α(ω)` and `L` (see [`FormConstants`]).
///
/// A non-positive `α(ω)` is reported through `elliptic = false`, not as an
/// error; callers may raise `ω` with [`certify_omega`].
pub fn estimate_constants(family: &FormFamily, t_grid: &[f64], omega: f64) -> Result<ConstantsEstimate> {
    if t_grid.len() < MIN_CONSTANT_SAMPLES {
        return Err(Error::Argument(format!(
            "constant estimation needs at least {MIN_CONSTANT_SAMPLES} sample times, got {}",
            t_grid.len()
        )));
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("sample times must be strictly increasing".into()));
    }
    let space = family.space();
    let mut m: f64 = 0.0;
    let mut alpha = f64::INFINITY;
    let mut lipschitz: f64 = 0.0;
    let mut previous: Option<(f64, DMatrix<f64>)> = None;
    for &t in t_grid {
        let a = family.matrix(t)?;
        m = m.max(v_operator_norm(space, &a)?);
        alpha = alpha.min(coercivity(space, &a, omega)?);
        if let Some((s, prev)) = previous.take() {
            lipschitz = lipschitz.max(v_operator_norm(space, &(&a - prev))? / (t - s));
        }
        previous = Some((t, a));
    }
    Ok(ConstantsEstimate {
        constants: FormConstants { m, alpha, omega, lipschitz: Some(lipschitz) },
        elliptic: alpha > 0.0,
        samples: t_grid.len(),
    })
}

/// Uniform grid of `samples` times covering `[0, T]`.
pub fn sample_grid(horizon: f64, samples: usize) -> Vec<f64> {
    let n = samples.max(2) - 1;
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// Smallest sample-certified shift `ω ≥ 0` making the family elliptic.
///
/// Returns the declared shift (or 0) when it already works; otherwise bisects
/// in `[0, 10·M/c_H²]`.
pub fn certify_omega(family: &FormFamily, t_grid: &[f64]) -> Result<ConstantsEstimate> {
    let start = family.declared().map(|c| c.omega).unwrap_or(0.0).max(0.0);
    let first = estimate_constants(family, t_grid, start)?;
    if first.elliptic {
        return Ok(first);
    }
    let c_h = family.space().embedding_constant()?;
    let upper = 10.0 * first.constants.m / (c_h * c_h);
    let top = estimate_constants(family, t_grid, upper)?;
    if !top.elliptic {
        return Err(Error::Contract(format!("family is not elliptic for any ω ≤ {upper:.3e}")));
    }
    let (mut lo, mut hi, mut best) = (start, upper, top);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let est = estimate_constants(family, t_grid, mid)?;
        if est.elliptic {
            hi = mid;
            best = est;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-10 * upper.max(1.0) {
            break;
        }
    }
    Ok(best)
}
