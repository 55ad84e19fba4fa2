//! Refinement studies over nested uniform subdivisions.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forms::{build_step_form, FormConstants, Subdivision};
use crate::linalg::graded_gauss;
use crate::mr::{fmt_f64, full_report, MRReport};
use crate::propagator::{oracle_solve, solve_step_form, ProblemData, Trajectory};
use crate::space::Quadratic;

pub const CONVERGENCE_CSV_HEADER: &str = "n_slabs,mesh,diff_l2V,diff_supH,rate_estimate,oracle_gap";

/// Results of solving one problem on a ladder of nested subdivisions.
///
/// `diffs_*[i]` compares ladder points `i` and `i + 1`; `rates[i]` is the
/// local order between `diffs[i − 1]` and `diffs[i]`.
#[derive(Clone, Debug)]
pub struct RefinementStudy {
    pub slab_counts: Vec<usize>,
    pub horizon: f64,
    pub diffs_l2v: Vec<f64>,
    pub diffs_suph: Vec<f64>,
    pub rates: Vec<f64>,
    /// Least-squares order over the last three differences.
    pub fitted_rate: f64,
    pub mr_rows: Vec<MRReport>,
    /// Sup-H gap of every ladder point to an oracle, when attached.
    pub oracle_gaps: Option<Vec<f64>>,
    pub trajectories: Vec<Trajectory>,
}

/// Checks that counts are positive, strictly increasing and nested.
pub fn validate_ladder(slab_counts: &[usize]) -> Result<()> {
    if slab_counts.is_empty() || slab_counts[0] == 0 {
        return Err(Error::Argument("ladder needs positive slab counts".into()));
    }
    for w in slab_counts.windows(2) {
        if w[1] <= w[0] || w[1] % w[0] != 0 {
            return Err(Error::Argument(format!("slab counts {} and {} are not nested", w[0], w[1])));
        }
    }
    Ok(())
}

/// `8, 16, …` doubling from `coarsest` to `finest`.
pub fn dyadic_ladder(coarsest: usize, finest: usize) -> Vec<usize> {
    std::iter::successors(Some(coarsest.max(1)), |&n| Some(n * 2)).take_while(|&n| n <= finest).collect()
}

/// `‖u − w‖_{L²(0,T;V)}` for nested subdivisions, integrated on the slabs of
/// the finer trajectory `w`.
pub fn l2v_distance(coarse: &Trajectory, fine: &Trajectory) -> Result<f64> {
    Ok(l2v_distance_sq(coarse, fine)?.sqrt())
}

fn l2v_distance_sq(coarse: &Trajectory, fine: &Trajectory) -> Result<f64> {
    let space = fine.space();
    let mut total = 0.0;
    for slab in fine.slabs() {
        let other = &coarse.slabs()[coarse.slab_index(slab.start())];
        let stiffness = slab.propagator.stiffness().max(other.propagator.stiffness());
        for (t, w) in graded_gauss(slab.start(), slab.start(), slab.end(), slab.propagator.len(), stiffness) {
            let d = slab.eval(t)? - other.eval(t)?;
            total += w * space.gram_v().dot_quadratic(&d);
        }
    }
    Ok(total)
}

fn sup_h_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let space = a.space();
    a.states().iter().zip(b.states()).map(|(x, y)| space.norm_h(&(x - y))).fold(0.0, f64::max)
}

/// Least-squares slope of `log diff` against `log mesh`.
pub fn fit_rate(meshes: &[f64], diffs: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = meshes
        .iter()
        .zip(diffs)
        .filter(|(_, d)| **d > 0.0)
        .map(|(h, d)| (h.ln(), d.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Solves `problem` on every ladder point and tabulates successive
/// differences on the finest breakpoints.
///
/// Audits in `mr_rows` use the per-slab constants at `ω = 0` together with
/// `lipschitz`. Ladder points run in parallel; the tables do not depend on
/// the thread count.
pub fn refine(problem: &ProblemData, slab_counts: &[usize], lipschitz: Option<f64>) -> Result<RefinementStudy> {
    validate_ladder(slab_counts)?;
    let horizon = problem.horizon();
    let finest = *slab_counts.last().unwrap();
    let grid = Subdivision::uniform(horizon, finest)?.points().to_vec();
    let runs = slab_counts
        .par_iter()
        .map(|&n| -> Result<(Trajectory, MRReport)> {
            let step_form = build_step_form(&problem.family, &Subdivision::uniform(horizon, n)?)?;
            let traj = solve_step_form(problem, &step_form, &grid)?;
            let constants = FormConstants { lipschitz, ..step_form.slab_constants(0.0)? };
            let report = full_report(&traj, &step_form, problem, &constants)?;
            Ok((traj, report))
        })
        .collect::<Result<Vec<_>>>()?;
    let (trajectories, mr_rows): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let pairs: Vec<(f64, f64)> = trajectories
        .par_windows(2)
        .map(|w| Ok((l2v_distance_sq(&w[0], &w[1])?.sqrt(), sup_h_distance(&w[0], &w[1]))))
        .collect::<Result<Vec<_>>>()?;
    let (diffs_l2v, diffs_suph): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let meshes: Vec<f64> = slab_counts.iter().map(|&n| horizon / n as f64).collect();
    let rates = (0..diffs_l2v.len())
        .map(|i| {
            if i == 0 {
                f64::NAN
            } else {
                (diffs_l2v[i - 1] / diffs_l2v[i]).ln() / (meshes[i - 1] / meshes[i]).ln()
            }
        })
        .collect();
    let tail = diffs_l2v.len().saturating_sub(3);
    let fitted_rate = fit_rate(&meshes[tail..diffs_l2v.len()], &diffs_l2v[tail..]);
    Ok(RefinementStudy {
        slab_counts: slab_counts.to_vec(),
        horizon,
        diffs_l2v,
        diffs_suph,
        rates,
        fitted_rate,
        mr_rows,
        oracle_gaps: None,
        trajectories,
    })
}

/// Sup over the oracle's grid of `‖u_Λ(t) − u_oracle(t)‖_H`.
pub fn gap_to_oracle(traj: &Trajectory, oracle: &Trajectory) -> Result<f64> {
    let space = traj.space();
    let mut gap: f64 = 0.0;
    for (&t, u) in oracle.grid().iter().zip(oracle.states()) {
        gap = gap.max(space.norm_h(&(traj.eval(t)? - u)));
    }
    Ok(gap)
}

pub fn sup_h(traj: &Trajectory) -> f64 {
    traj.states().iter().map(|u| traj.space().norm_h(u)).fold(0.0, f64::max)
}

/// Sup-H gap between the frozen solve on `n_slabs` uniform slabs and
/// implicit Euler with `steps` steps.
pub fn oracle_gap(problem: &ProblemData, n_slabs: usize, steps: usize) -> Result<f64> {
    let oracle = oracle_solve(problem, steps)?;
    let traj = solve_step_form(
        problem,
        &build_step_form(&problem.family, &Subdivision::uniform(problem.horizon(), n_slabs)?)?,
        &[],
    )?;
    gap_to_oracle(&traj, &oracle)
}

impl RefinementStudy {
    /// Computes the oracle gap of every ladder point.
    pub fn attach_oracle(&mut self, oracle: &Trajectory) -> Result<()> {
        let gaps = self.trajectories.par_iter().map(|t| gap_to_oracle(t, oracle)).collect::<Result<Vec<_>>>()?;
        self.oracle_gaps = Some(gaps);
        Ok(())
    }

    pub fn mesh(&self, i: usize) -> f64 {
        self.horizon / self.slab_counts[i] as f64
    }

    /// One row per ladder point; differences are reported on the finer point
    /// of each pair.
    pub fn csv(&self) -> String {
        let mut out = String::from(CONVERGENCE_CSV_HEADER);
        out.push('\n');
        for (i, &n) in self.slab_counts.iter().enumerate() {
            let pick = |v: &[f64]| if i == 0 { f64::NAN } else { v[i - 1] };
            let gap = self.oracle_gaps.as_ref().map_or(f64::NAN, |g| g[i]);
            let cells = [
                fmt_f64(self.mesh(i)),
                fmt_f64(pick(&self.diffs_l2v)),
                fmt_f64(pick(&self.diffs_suph)),
                fmt_f64(pick(&self.rates)),
                fmt_f64(gap),
            ];
            out.push_str(&format!("{n},{}\n", cells.join(",")));
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = format!("{:>8} {:>12} {:>12} {:>12} {:>8}\n", "n_slabs", "mesh", "diff_l2V", "diff_supH", "rate");
        for (i, &n) in self.slab_counts.iter().enumerate() {
            let pick = |v: &[f64]| if i == 0 { f64::NAN } else { v[i - 1] };
            out.push_str(&format!(
                "{n:>8} {:>12.4e} {:>12.4e} {:>12.4e} {:>8.3}\n",
                self.mesh(i),
                pick(&self.diffs_l2v),
                pick(&self.diffs_suph),
                pick(&self.rates)
            ));
        }
        out.push_str(&format!("fitted rate (last three differences): {:.4}\n", self.fitted_rate));
        out
    }

    /// Strictly decreasing differences, ignoring pairs where both sit below
    /// `floor`.
    pub fn is_monotone(&self, floor: f64) -> bool {
        self.diffs_l2v.windows(2).all(|w| w[1] < w[0] || (w[0] <= floor && w[1] <= floor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, LoadKind, PresetOptions};

    #[test]
    fn ladder_validation() {
        assert!(validate_ladder(&[8, 16, 32]).is_ok());
        assert!(validate_ladder(&[8, 12]).is_err());
        assert!(validate_ladder(&[16, 8]).is_err());
        assert!(validate_ladder(&[]).is_err());
        assert_eq!(dyadic_ladder(8, 512), vec![8, 16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn rate_fit_recovers_power_law() {
        let meshes = [0.1, 0.05, 0.025];
        let diffs: Vec<f64> = meshes.iter().map(|h: &f64| 3.0 * h.powf(1.5)).collect();
        assert!((fit_rate(&meshes, &diffs) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_family_is_ladder_independent() {
        let problem = presets::build("scalar-constant", &PresetOptions::default()).unwrap().problem;
        let study = refine(&problem, &[2, 4, 8], Some(0.0)).unwrap();
        assert!(study.diffs_l2v.iter().chain(&study.diffs_suph).all(|&d| d <= 1e-12), "{study:?}");
    }

    #[test]
    fn scalar_decay_is_ladder_independent() {
        let problem = presets::build("scalar-decay", &PresetOptions::default()).unwrap().problem;
        let study = refine(&problem, &[4, 8, 16], Some(0.5)).unwrap();
        // only the end states agree exactly; inside slabs the frozen rates differ
        let t = problem.horizon();
        for traj in &study.trajectories {
            let exact = (-(t + t * t / 4.0)).exp();
            assert!((traj.eval(t).unwrap()[0] - exact).abs() <= 1e-12);
        }
        // the exponent error inside a slab is O(h²)
        let ratio = study.diffs_suph[0] / study.diffs_suph[1];
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn heat_differences_shrink() {
        let options = PresetOptions { elements: Some(8), ..Default::default() };
        let problem = presets::build("heat-1d-lipschitz", &options).unwrap().problem;
        let study = refine(&problem, &[4, 8, 16, 32], Some(0.5)).unwrap();
        assert!(study.is_monotone(1e-11), "{:?}", study.diffs_l2v);
        assert!(study.csv().lines().count() == 5);
    }

    #[test]
    fn zero_problem_has_zero_oracle_gap() {
        let options = PresetOptions { elements: Some(4), load: Some(LoadKind::Zero), ..Default::default() };
        let mut problem = presets::build("heat-1d-constant", &options).unwrap().problem;
        problem.u0.fill(0.0);
        assert_eq!(oracle_gap(&problem, 4, 100).unwrap(), 0.0);
    }
}
