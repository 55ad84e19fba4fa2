//! Maximal-regularity norms of frozen-coefficient trajectories and numerical
//! audits of the identities and a-priori estimates they satisfy.
//!
//! Every time integral is a graded four-point Gauss rule per slab applied to
//! the exact slab solution; `u̇` always comes from the slab equation
//! `u̇ = f̄ₖ − Bₖ u`, never from differencing. Estimates that involve the load
//! use the slab-averaged load, which is the data the step problem solves.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::forms::{FormConstants, StepForm};
use crate::linalg::graded_gauss;
use crate::propagator::{ProblemData, SlabRecord, Trajectory};
use crate::space::{GalerkinSpace, Quadratic};

/// CSV header matching [`MRReport::csv_row`].
pub const MR_CSV_HEADER: &str = "n_slabs,mesh,l2V,h1H,h1Vp,supV,mr_vvp,mr_vh,residual_chain,residual_product,margin_lem3,margin_indepmax,ratio_H";

#[derive(Clone, Debug, PartialEq)]
pub struct MRReport {
    pub n_slabs: usize,
    pub mesh: f64,
    /// `‖u‖_{L²(0,T;V)}`
    pub l2v: f64,
    /// `‖u̇‖_{L²(0,T;H)}`
    pub h1h: f64,
    /// `‖u̇‖_{L²(0,T;V′)}`
    pub h1vp: f64,
    pub supv: f64,
    pub suph: f64,
    /// `sqrt(l2v² + h1vp²)`
    pub mr_vvp: f64,
    /// `sqrt(l2v² + h1h²)`
    pub mr_vh: f64,
    pub residual_chain: Option<f64>,
    pub residual_product: Option<f64>,
    pub margin_lem3: Option<f64>,
    pub margin_indepmax: Option<f64>,
    pub ratio_h: Option<f64>,
}

impl MRReport {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| fmt_f64(x.unwrap_or(f64::NAN));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n_slabs,
            fmt_f64(self.mesh),
            fmt_f64(self.l2v),
            fmt_f64(self.h1h),
            fmt_f64(self.h1vp),
            fmt_f64(self.supv),
            fmt_f64(self.mr_vvp),
            fmt_f64(self.mr_vh),
            opt(self.residual_chain),
            opt(self.residual_product),
            opt(self.margin_lem3),
            opt(self.margin_indepmax),
            opt(self.ratio_h),
        )
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    format!("{x:.16e}")
}

fn slab_rule(slab: &SlabRecord, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let p = &slab.propagator;
    graded_gauss(p.start(), lo, hi, p.len(), p.stiffness())
}

/// Visits `(t, w, slab, u, u̇)` for a quadrature of `[lo, hi]` split at slab
/// boundaries.
fn quadrature<F>(traj: &Trajectory, lo: f64, hi: f64, mut visit: F) -> Result<()>
where
    F: FnMut(f64, f64, &SlabRecord, &DVector<f64>, &DVector<f64>),
{
    if hi <= lo {
        return Ok(());
    }
    let first = traj.slab_index(lo);
    for slab in &traj.slabs()[first..] {
        if slab.start() >= hi {
            break;
        }
        let a = lo.max(slab.start());
        let b = hi.min(slab.end());
        for (t, w) in slab_rule(slab, a, b) {
            let u = slab.eval(t)?;
            let du = slab.velocity(&u);
            visit(t, w, slab, &u, &du);
        }
    }
    Ok(())
}

fn v_dual_of_h(space: &GalerkinSpace, x: &DVector<f64>) -> Result<f64> {
    space.dual_norm(&space.h_representation(x))
}

/// MR(V,V′) and MR(V,H) norms of a frozen-coefficient trajectory.
pub fn mr_norms(traj: &Trajectory, step_form: &StepForm) -> Result<MRReport> {
    traj.require_metadata()?;
    if step_form.subdivision().n_slabs() != traj.slabs().len() {
        return Err(Error::Contract(format!(
            "step form has {} slabs, trajectory {}",
            step_form.subdivision().n_slabs(),
            traj.slabs().len()
        )));
    }
    let space = traj.space();
    let (mut l2v, mut h1h, mut h1vp) = (0.0, 0.0, 0.0);
    let mut supv: f64 = 0.0;
    let mut suph: f64 = 0.0;
    let mut err = None;
    quadrature(traj, 0.0, traj.horizon(), |_, w, _, u, du| {
        l2v += w * space.gram_v().dot_quadratic(u);
        h1h += w * space.gram_h().dot_quadratic(du);
        match v_dual_of_h(space, du) {
            Ok(x) => h1vp += w * x * x,
            Err(e) => err = Some(e),
        }
        supv = supv.max(space.norm_v(u));
        suph = suph.max(space.norm_h(u));
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    for slab in traj.slabs() {
        for u in [slab.state.clone(), slab.eval(slab.end())?] {
            supv = supv.max(space.norm_v(&u));
            suph = suph.max(space.norm_h(&u));
        }
    }
    let (l2v, h1h, h1vp) = (l2v.sqrt(), h1h.sqrt(), h1vp.sqrt());
    Ok(MRReport {
        n_slabs: traj.slabs().len(),
        mesh: step_form.subdivision().mesh(),
        l2v,
        h1h,
        h1vp,
        supv,
        suph,
        mr_vvp: l2v.hypot(h1vp),
        mr_vh: l2v.hypot(h1h),
        residual_chain: None,
        residual_product: None,
        margin_lem3: None,
        margin_indepmax: None,
        ratio_h: None,
    })
}

/// Largest defect of `‖u(t₂)‖² − ‖u(t₁)‖² = ∫ 2(u̇|u)` over output-grid
/// intervals.
pub fn check_chain_rule(traj: &Trajectory) -> Result<f64> {
    traj.require_metadata()?;
    let space = traj.space();
    let mut worst: f64 = 0.0;
    for (i, pair) in traj.grid().windows(2).enumerate() {
        let (t1, t2) = (pair[0], pair[1]);
        let mut integral = 0.0;
        quadrature(traj, t1, t2, |_, w, _, u, du| {
            integral += 2.0 * w * space.inner_h(du, u);
        })?;
        let lhs = space.gram_h().dot_quadratic(&traj.states()[i + 1]) - space.gram_h().dot_quadratic(&traj.states()[i]);
        worst = worst.max((lhs - integral).abs());
    }
    Ok(worst)
}

fn require_symmetric(step_form: &StepForm, what: &str) -> Result<()> {
    if step_form.is_symmetric() {
        Ok(())
    } else {
        Err(Error::Contract(format!("{what} needs a symmetric form")))
    }
}

fn require_coercive(constants: &FormConstants, what: &str) -> Result<()> {
    if constants.omega == 0.0 && constants.alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "{what} needs ω = 0 with α > 0 (got ω = {}, α = {})",
            constants.omega, constants.alpha
        )))
    }
}

/// Largest per-slab defect of `aₖ(u(λₖ₊₁)) − aₖ(u(λₖ)) = ∫ 2(Aₖu | u̇)`.
pub fn check_product_rule(traj: &Trajectory, step_form: &StepForm) -> Result<f64> {
    traj.require_metadata()?;
    require_symmetric(step_form, "product rule")?;
    let mut worst: f64 = 0.0;
    for (k, slab) in traj.slabs().iter().enumerate() {
        let a = &step_form.slabs()[k];
        let mut integral = 0.0;
        for (t, w) in slab_rule(slab, slab.start(), slab.end()) {
            let u = slab.eval(t)?;
            let du = slab.velocity(&u);
            integral += 2.0 * w * du.dot(&(a * &u));
        }
        let end = slab.eval(slab.end())?;
        let lhs = a.dot_quadratic(&end) - a.dot_quadratic(&slab.state);
        worst = worst.max((lhs - integral).abs());
    }
    Ok(worst)
}

/// Per-slab bound `sup ‖u‖_V² ≤ (1/α)(M ‖u(λₖ)‖_V² + ‖f̄‖²_{L²(λₖ,λₖ₊₁;H)})`;
/// returns the smallest right-minus-left margin.
pub fn check_lemma_indepmax(traj: &Trajectory, step_form: &StepForm, constants: &FormConstants) -> Result<f64> {
    traj.require_metadata()?;
    require_symmetric(step_form, "slab sup-norm bound")?;
    require_coercive(constants, "slab sup-norm bound")?;
    let space = traj.space();
    let mut margin = f64::INFINITY;
    for slab in traj.slabs() {
        let start_v = space.gram_v().dot_quadratic(&slab.state);
        let load_h = slab.propagator.len() * space.gram_h().dot_quadratic(&slab.load);
        let rhs = (constants.m * start_v + load_h) / constants.alpha;
        let mut sup = start_v.max(space.gram_v().dot_quadratic(&slab.eval(slab.end())?));
        for (t, _) in slab_rule(slab, slab.start(), slab.end()) {
            sup = sup.max(space.gram_v().dot_quadratic(&slab.eval(t)?));
        }
        margin = margin.min(rhs - sup);
    }
    Ok(margin)
}

/// `c₂ = max(1/α², 1/α)`: Young's inequality with `ε = α` in the energy
/// identity `‖u(t)‖² + 2α∫‖u‖_V² ≤ 2∫‖f‖_{V′}‖u‖_V + ‖u₀‖²`.
pub fn lemma3_constant(alpha: f64) -> f64 {
    (1.0 / (alpha * alpha)).max(1.0 / alpha)
}

/// `∫₀ᵗ ‖u‖_V² ≤ c₂ [∫₀ᵗ ‖f̄‖²_{V′} + ‖u₀‖²]` at every output time; returns the
/// smallest margin.
pub fn check_lemma3(traj: &Trajectory, problem: &ProblemData, alpha: f64) -> Result<f64> {
    traj.require_metadata()?;
    if !(alpha > 0.0) {
        return Err(Error::Contract(format!("energy bound needs α > 0, got {alpha}")));
    }
    let space = traj.space();
    let c2 = lemma3_constant(alpha);
    let u0 = space.gram_h().dot_quadratic(&problem.u0);
    let mut load_dual = Vec::with_capacity(traj.slabs().len());
    for slab in traj.slabs() {
        let n = v_dual_of_h(space, &slab.load)?;
        load_dual.push(n * n);
    }
    let mut cum_u = 0.0;
    let mut cum_f = 0.0;
    let mut margin = c2 * u0;
    for pair in traj.grid().windows(2) {
        let (t1, t2) = (pair[0], pair[1]);
        quadrature(traj, t1, t2, |_, w, _, u, _| cum_u += w * space.gram_v().dot_quadratic(u))?;
        let first = traj.slab_index(t1);
        for (k, slab) in traj.slabs().iter().enumerate().skip(first) {
            if slab.start() >= t2 {
                break;
            }
            let len = t2.min(slab.end()) - t1.max(slab.start());
            if len > 0.0 {
                cum_f += len * load_dual[k];
            }
        }
        margin = margin.min(c2 * (cum_f + u0) - cum_u);
    }
    Ok(margin)
}

fn load_l2_h(traj: &Trajectory) -> f64 {
    let space = traj.space();
    traj.slabs()
        .iter()
        .map(|s| s.propagator.len() * space.gram_h().dot_quadratic(&s.load))
        .sum::<f64>()
        .sqrt()
}

fn is_uniform(traj: &Trajectory) -> bool {
    let h0 = traj.slabs()[0].propagator.len();
    traj.slabs().iter().all(|s| (s.propagator.len() - h0).abs() <= 1e-9 * h0)
}

/// `‖u‖_{MR(V,H)} / (‖u₀‖_V + ‖f̄‖_{L²(0,T;H)})`, or 0 when the data vanish.
pub fn check_h_estimate(traj: &Trajectory, problem: &ProblemData, constants: &FormConstants) -> Result<f64> {
    traj.require_metadata()?;
    if !problem.family.is_symmetric() {
        return Err(Error::Contract("MR(V,H) bound needs a symmetric family".into()));
    }
    if constants.lipschitz.is_none() {
        return Err(Error::Contract("MR(V,H) bound needs a Lipschitz constant".into()));
    }
    if !is_uniform(traj) {
        return Err(Error::Contract("MR(V,H) bound is audited on uniform subdivisions".into()));
    }
    let space = traj.space();
    let data = space.norm_v(&problem.u0) + load_l2_h(traj);
    if data == 0.0 {
        return Ok(0.0);
    }
    let (mut l2v, mut h1h) = (0.0, 0.0);
    quadrature(traj, 0.0, traj.horizon(), |_, w, _, u, du| {
        l2v += w * space.gram_v().dot_quadratic(u);
        h1h += w * space.gram_h().dot_quadratic(du);
    })?;
    Ok((l2v + h1h).sqrt() / data)
}

/// Junction inequality `|aₖ(u(λₖ₊₁)) − aₖ₊₁(u(λₖ₊₁))| ≤ L (λₖ₊₁−λₖ) ‖u(λₖ₊₁)‖_V²`;
/// returns the smallest margin (∞ for a single slab).
pub fn check_lipschitz_telescoping(traj: &Trajectory, step_form: &StepForm, lipschitz: f64) -> Result<f64> {
    traj.require_metadata()?;
    require_symmetric(step_form, "junction bound")?;
    let space = traj.space();
    let mut margin = f64::INFINITY;
    for k in 0..traj.slabs().len().saturating_sub(1) {
        let next = &traj.slabs()[k + 1];
        let u = &next.state;
        let jump = (step_form.slabs()[k].dot_quadratic(u) - step_form.slabs()[k + 1].dot_quadratic(u)).abs();
        let h = traj.slabs()[k].propagator.len();
        margin = margin.min(lipschitz * h * space.gram_v().dot_quadratic(u) - jump);
    }
    Ok(margin)
}

/// Norms plus every applicable audit.
///
/// Symmetric-only audits are skipped for non-symmetric forms; the
/// coercivity-based ones are skipped unless `constants.omega == 0`.
pub fn full_report(
    traj: &Trajectory,
    step_form: &StepForm,
    problem: &ProblemData,
    constants: &FormConstants,
) -> Result<MRReport> {
    let mut report = mr_norms(traj, step_form)?;
    report.residual_chain = Some(check_chain_rule(traj)?);
    let coercive = constants.omega == 0.0 && constants.alpha > 0.0;
    if coercive {
        report.margin_lem3 = Some(check_lemma3(traj, problem, constants.alpha)?);
    }
    if step_form.is_symmetric() {
        report.residual_product = Some(check_product_rule(traj, step_form)?);
        if coercive {
            report.margin_indepmax = Some(check_lemma_indepmax(traj, step_form, constants)?);
        }
        if constants.lipschitz.is_some() && is_uniform(traj) {
            report.ratio_h = Some(check_h_estimate(traj, problem, constants)?);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{build_step_form, Subdivision};
    use crate::presets::{self, LoadKind, PresetOptions};
    use crate::propagator::solve_step_form;
    use approx::assert_relative_eq;

    fn run(name: &str, options: &PresetOptions, slabs: usize) -> (Trajectory, StepForm, ProblemData) {
        let problem = presets::build(name, options).unwrap().problem;
        let sub = Subdivision::uniform(problem.horizon(), slabs).unwrap();
        let sf = build_step_form(&problem.family, &sub).unwrap();
        let grid: Vec<f64> = (0..=16).map(|i| problem.horizon() * i as f64 / 16.0).collect();
        let traj = solve_step_form(&problem, &sf, &grid).unwrap();
        (traj, sf, problem)
    }

    #[test]
    fn scalar_decay_norms_in_closed_form() {
        // u = e^{-t}: every L² norm squared is (1 − e^{-2})/2
        let (traj, sf, problem) = run("scalar-constant", &PresetOptions::default(), 4);
        let exact = ((1.0 - (-2f64).exp()) / 2.0).sqrt();
        let constants = FormConstants { lipschitz: Some(0.0), ..sf.slab_constants(0.0).unwrap() };
        let r = full_report(&traj, &sf, &problem, &constants).unwrap();
        assert_relative_eq!(r.l2v, exact, max_relative = 1e-12);
        assert_relative_eq!(r.h1h, exact, max_relative = 1e-12);
        assert_relative_eq!(r.h1vp, exact, max_relative = 1e-12);
        assert_relative_eq!(r.supv, 1.0, max_relative = 1e-15);
        assert_relative_eq!(r.mr_vh, exact * 2f64.sqrt(), max_relative = 1e-12);
        assert!(r.residual_chain.unwrap() <= 1e-12);
        assert!(r.residual_product.unwrap() <= 1e-12);
        // the slab bound is attained at the start of the first slab
        assert!(r.margin_indepmax.unwrap().abs() <= 1e-14);
        assert_relative_eq!(r.margin_lem3.unwrap(), 1.0 - exact * exact, max_relative = 1e-12);
        assert_relative_eq!(r.ratio_h.unwrap(), exact * 2f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn zero_data_gives_zero_norms() {
        let problem = presets::build("scalar-constant", &PresetOptions::default()).unwrap().problem;
        let problem = ProblemData::new(problem.family.clone(), DVector::zeros(1), None).unwrap();
        let sub = Subdivision::uniform(1.0, 4).unwrap();
        let sf = build_step_form(&problem.family, &sub).unwrap();
        let traj = solve_step_form(&problem, &sf, &[]).unwrap();
        let constants = FormConstants { lipschitz: Some(0.0), ..sf.slab_constants(0.0).unwrap() };
        let r = full_report(&traj, &sf, &problem, &constants).unwrap();
        assert_eq!((r.l2v, r.h1h, r.h1vp, r.supv), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.ratio_h, Some(0.0));
    }

    #[test]
    fn heat_audits_hold() {
        let options = PresetOptions { elements: Some(16), ..Default::default() };
        let (traj, sf, problem) = run("heat-1d-lipschitz", &options, 16);
        let constants = sf.slab_constants(0.0).unwrap();
        let r = full_report(&traj, &sf, &problem, &constants).unwrap();
        assert!(r.residual_chain.unwrap() <= 1e-8, "{r:?}");
        assert!(r.residual_product.unwrap() <= 1e-8, "{r:?}");
        assert!(r.margin_indepmax.unwrap() >= -1e-10, "{r:?}");
        assert!(r.margin_lem3.unwrap() >= 0.0, "{r:?}");
        assert!(check_lipschitz_telescoping(&traj, &sf, 0.5).unwrap() >= -1e-9);
        // MR(V,V′) is weaker than MR(V,H) up to c_H
        let c_h = problem.space().embedding_constant().unwrap();
        assert!(r.h1vp <= c_h * r.h1h * (1.0 + 1e-12));
    }

    #[test]
    fn non_symmetric_skips_symmetric_audits() {
        let options = PresetOptions { elements: Some(8), load: Some(LoadKind::Zero), ..Default::default() };
        let (traj, sf, problem) = run("advection-diffusion-1d", &options, 8);
        let constants = sf.slab_constants(0.0).unwrap();
        let r = full_report(&traj, &sf, &problem, &constants).unwrap();
        assert!(r.residual_chain.unwrap() <= 1e-8);
        assert!(r.residual_product.is_none() && r.margin_indepmax.is_none() && r.ratio_h.is_none());
        assert!(matches!(check_product_rule(&traj, &sf), Err(Error::Contract(_))));
    }

    #[test]
    fn csv_row_matches_header() {
        let (traj, sf, _) = run("scalar-decay", &PresetOptions::default(), 2);
        let row = mr_norms(&traj, &sf).unwrap().csv_row();
        assert_eq!(row.split(',').count(), MR_CSV_HEADER.split(',').count());
        assert!(row.ends_with(",nan"));
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn oracle_trajectory_is_rejected() {
        let problem = presets::build("scalar-decay", &PresetOptions::default()).unwrap().problem;
        let traj = crate::propagator::oracle_solve(&problem, 10).unwrap();
        assert!(matches!(check_chain_rule(&traj), Err(Error::Contract(_))));
    }
}
