//! Command-line driver: configuration, experiment pipelines and report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::Deserialize;

use crate::convergence::{self, refine, RefinementStudy};
use crate::error::{Error, Result};
use crate::forms::{build_step_form, certify_omega, sample_grid, Subdivision};
use crate::linalg::composite_gauss;
use crate::invariance::{self, ConvexSet, InvarianceRow, SetKind};
use crate::mr::{self, fmt_f64, MR_CSV_HEADER};
use crate::presets::{self, LoadKind, Metric, Preset, PresetOptions, PRESETS};
use crate::propagator::{oracle_solve, solve, ProblemData, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "evolveq", version, about = "Frozen-coefficient solver and audits for non-autonomous parabolic problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment file (TOML); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (falls back to the config, then `EVOLVEQ_OUT`, then `evolveq-out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Estimate M, α, ω and L on a sample grid.
    Constants,
    /// Solve on every ladder point and write trajectories and MR norms.
    Solve,
    /// Refinement study with optional oracle comparison.
    Converge,
    /// Invariance criteria and trajectory audit for the configured set.
    Invariance,
    /// constants, converge (with trajectories) and invariance.
    All,
    ListPresets,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub preset: String,
    pub elements: Option<usize>,
    pub horizon: Option<f64>,
    pub metric: String,
    pub seed: u64,
    /// Shift used instead of the certified one.
    pub omega: Option<f64>,
    pub ladder: LadderConfig,
    pub load: LoadConfig,
    pub set: SetConfig,
    pub invariance: InvarianceConfig,
    pub oracle: OracleConfig,
    pub output: OutputConfig,
    pub checks: Checks,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            preset: "heat-1d-lipschitz".into(),
            elements: None,
            horizon: None,
            metric: "lumped".into(),
            seed: 0,
            omega: None,
            ladder: LadderConfig::default(),
            load: LoadConfig::default(),
            set: SetConfig::default(),
            invariance: InvarianceConfig::default(),
            oracle: OracleConfig::default(),
            output: OutputConfig::default(),
            checks: Checks::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderConfig {
    pub slab_counts: Vec<usize>,
    /// Output times per trajectory written by `solve`.
    pub output_points: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig { slab_counts: convergence::dyadic_ladder(8, 512), output_points: 65 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    /// `zero`, `smooth` or `constant`; the preset default when absent.
    pub kind: Option<String>,
    pub amplitude: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        LoadConfig { kind: None, amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetConfig {
    /// `box`, `ball` or `halfspace`.
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    pub center: f64,
    pub radius: f64,
    /// Halfspace `(1 | x)_H ≤ offset`.
    pub offset: f64,
}

impl Default for SetConfig {
    fn default() -> Self {
        SetConfig { kind: "box".into(), lower: 0.0, upper: f64::INFINITY, center: 0.0, radius: 1.0, offset: 0.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InvarianceConfig {
    pub t_samples: usize,
    pub vectors: usize,
    /// Use the inhomogeneous criterion with the configured load.
    pub with_load: bool,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig { t_samples: 33, vectors: 10_000, with_load: false }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Implicit Euler steps; 0 disables the oracle.
    pub steps: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Slab counts whose trajectories are written; the finest when empty.
    pub trajectories: Vec<usize>,
}

/// Pass/fail thresholds. Unset optional checks are skipped.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Checks {
    pub chain_tol: f64,
    pub product_tol: f64,
    pub slab_bound_tol: f64,
    pub junction_tol: f64,
    pub criterion_tol: f64,
    pub violation_tol: f64,
    pub max_ratio_spread: f64,
    pub monotone_floor: f64,
    pub max_diff_l2v: Option<f64>,
    pub strictly_decreasing: bool,
    pub min_rate: Option<f64>,
    pub max_oracle_gap_rel: Option<f64>,
    pub scalar_exact_tol: Option<f64>,
    pub rescale_omegas: Vec<f64>,
    pub rescale_tol: f64,
    /// The preset is a counterexample: require a negative margin and a violation.
    pub expect_violation: bool,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            chain_tol: 1e-8,
            product_tol: 1e-8,
            slab_bound_tol: 1e-10,
            junction_tol: 1e-9,
            criterion_tol: 1e-12,
            violation_tol: 1e-10,
            max_ratio_spread: 0.1,
            monotone_floor: 1e-11,
            max_diff_l2v: None,
            strictly_decreasing: false,
            min_rate: None,
            max_oracle_gap_rel: None,
            scalar_exact_tol: None,
            rescale_omegas: Vec::new(),
            rescale_tol: 1e-9,
            expect_violation: false,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        presets::find(&self.preset)?;
        Metric::parse(&self.metric)?;
        if let Some(kind) = &self.load.kind {
            LoadKind::parse(kind)?;
        }
        convergence::validate_ladder(&self.ladder.slab_counts).map_err(|e| Error::Config(e.to_string()))?;
        if !["box", "ball", "halfspace"].contains(&self.set.kind.as_str()) {
            return Err(Error::Config(format!("unknown set kind `{}`", self.set.kind)));
        }
        if self.invariance.t_samples < 2 {
            return Err(Error::Config("invariance.t_samples must be at least 2".into()));
        }
        Ok(())
    }

    pub fn preset_options(&self) -> Result<PresetOptions> {
        Ok(PresetOptions {
            elements: self.elements,
            horizon: self.horizon,
            load: self.load.kind.as_deref().map(LoadKind::parse).transpose()?,
            amplitude: self.load.amplitude,
            metric: Metric::parse(&self.metric)?,
        })
    }

    pub fn convex_set(&self, problem: &ProblemData) -> Result<ConvexSet> {
        let n = problem.space().dim();
        let s = &self.set;
        let kind = match s.kind.as_str() {
            "box" => SetKind::Box { lower: DVector::from_element(n, s.lower), upper: DVector::from_element(n, s.upper) },
            "ball" => SetKind::Ball { center: DVector::from_element(n, s.center), radius: s.radius },
            _ => SetKind::Halfspace { normal: DVector::from_element(n, 1.0), offset: s.offset },
        };
        ConvexSet::new(kind, problem.space().gram_h().clone())
    }
}

/// Text, failures and files produced by a pipeline.
#[derive(Debug, Default)]
pub struct Report {
    pub summary: String,
    pub failures: Vec<String>,
    pub files: Vec<(String, String)>,
}

impl Report {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        let _ = writeln!(self.summary, "  [{}] {what}", if ok { "ok" } else { "FAIL" });
        if !ok {
            self.failures.push(what);
        }
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }

    fn file(&mut self, name: impl Into<String>, content: String) {
        self.files.push((name.into(), content));
    }
}

pub struct Experiment {
    pub config: Config,
    pub preset: Preset,
    pub seed: u64,
}

impl Experiment {
    pub fn new(config: Config, seed: Option<u64>) -> Result<Self> {
        let preset = presets::build(&config.preset, &config.preset_options()?)?;
        let seed = seed.unwrap_or(config.seed);
        Ok(Experiment { config, preset, seed })
    }

    fn problem(&self) -> &ProblemData {
        &self.preset.problem
    }

    /// The problem the audits run on: rescaled when a positive shift is in force.
    fn working_problem(&self, omega: f64) -> ProblemData {
        if omega > 0.0 {
            self.problem().rescaled(omega)
        } else {
            self.problem().clone()
        }
    }

    fn omega(&self) -> Result<f64> {
        if let Some(w) = self.config.omega {
            return Ok(w);
        }
        let fam = &self.problem().family;
        Ok(certify_omega(fam, &sample_grid(fam.horizon(), 65))?.constants.omega)
    }

    pub fn constants(&self, report: &mut Report) -> Result<()> {
        let fam = &self.problem().family;
        let grid = sample_grid(fam.horizon(), 65);
        let est = match self.config.omega {
            Some(w) => crate::forms::estimate_constants(fam, &grid, w)?,
            None => certify_omega(fam, &grid)?,
        };
        let c = est.constants;
        let c_h = self.problem().space().embedding_constant()?;
        report.line(format!("constants ({}, {} samples)", self.preset.name, est.samples));
        report.line(format!(
            "  sampled: M = {:.6}  α = {:.6}  ω = {}  L = {:.6}  c_H = {:.6}",
            c.m,
            c.alpha,
            c.omega,
            c.lipschitz.unwrap_or(f64::NAN),
            c_h
        ));
        if let Some(d) = fam.declared() {
            let l = d.lipschitz.map_or("unknown".to_string(), |l| format!("{l}"));
            report.line(format!("  declared: M = {}  α = {}  ω = {}  L = {l}", d.m, d.alpha, d.omega));
        } else if let Some(l) = self.preset.lipschitz {
            report.line(format!("  analytic: L = {l}"));
        }
        report.check(est.elliptic, format!("elliptic on samples with ω = {}", c.omega));
        Ok(())
    }

    fn output_grid(&self) -> Vec<f64> {
        sample_grid(self.problem().horizon(), self.config.ladder.output_points.max(2))
    }

    fn trajectory_counts(&self) -> Vec<usize> {
        if self.config.output.trajectories.is_empty() {
            vec![*self.config.ladder.slab_counts.last().unwrap()]
        } else {
            self.config.output.trajectories.clone()
        }
    }

    fn write_trajectory(&self, report: &mut Report, n: usize, traj: &Trajectory) {
        let dim = self.problem().space().dim();
        let mut csv = String::from("t");
        for i in 0..dim {
            let _ = write!(csv, ",u{i}");
        }
        csv.push('\n');
        let mut dat = String::new();
        for (t, u) in traj.grid().iter().zip(traj.states()) {
            csv.push_str(&fmt_f64(*t));
            for x in u.iter() {
                csv.push(',');
                csv.push_str(&fmt_f64(*x));
            }
            csv.push('\n');
            let _ = writeln!(dat, "{} {}", fmt_f64(*t), fmt_f64(traj.space().norm_h(u)));
        }
        report.file(format!("traj_{n}.csv"), csv);
        report.file(format!("norm_h_{n}.dat"), dat);
    }

    pub fn solve(&self, report: &mut Report) -> Result<()> {
        let omega = self.omega()?;
        let problem = self.working_problem(omega);
        let grid = self.output_grid();
        let mut mr_csv = format!("{MR_CSV_HEADER}\n");
        report.line(format!("solve ({}, ω = {omega})", self.preset.name));
        let wanted = self.trajectory_counts();
        for &n in &self.config.ladder.slab_counts {
            let sf = build_step_form(&problem.family, &Subdivision::uniform(problem.horizon(), n)?)?;
            let traj = crate::propagator::solve_step_form(&problem, &sf, &grid)?;
            let constants = crate::forms::FormConstants { lipschitz: self.preset.lipschitz, ..sf.slab_constants(0.0)? };
            let row = mr::full_report(&traj, &sf, &problem, &constants)?;
            self.audit_row(report, &row);
            mr_csv.push_str(&row.csv_row());
            mr_csv.push('\n');
            if wanted.contains(&n) {
                let original = if omega > 0.0 { solve(self.problem(), sf.subdivision(), &grid)? } else { traj };
                self.write_trajectory(report, n, &original);
            }
        }
        report.file("mr.csv", mr_csv);
        Ok(())
    }

    fn audit_row(&self, report: &mut Report, row: &mr::MRReport) {
        let c = &self.config.checks;
        let n = row.n_slabs;
        if let Some(r) = row.residual_chain {
            report.check(r <= c.chain_tol, format!("n={n}: chain rule residual {r:.3e} ≤ {:.0e}", c.chain_tol));
        }
        if let Some(r) = row.residual_product {
            report.check(r <= c.product_tol, format!("n={n}: product rule residual {r:.3e} ≤ {:.0e}", c.product_tol));
        }
        if let Some(m) = row.margin_lem3 {
            report.check(m >= 0.0, format!("n={n}: energy bound margin {m:.3e} ≥ 0"));
        }
        if let Some(m) = row.margin_indepmax {
            report.check(m >= -c.slab_bound_tol, format!("n={n}: per-slab sup bound margin {m:.3e} ≥ −{:.0e}", c.slab_bound_tol));
        }
    }

    pub fn converge(&self, report: &mut Report, write_trajectories: bool) -> Result<RefinementStudy> {
        let omega = self.omega()?;
        let problem = self.working_problem(omega);
        let counts = &self.config.ladder.slab_counts;
        let c = &self.config.checks;
        report.line(format!("converge ({}, ω = {omega}, ladder {counts:?})", self.preset.name));
        let mut study = refine(&problem, counts, self.preset.lipschitz)?;
        let mut oracle_rel = None;
        if self.config.oracle.steps > 0 {
            let oracle = oracle_solve(&problem, self.config.oracle.steps)?;
            study.attach_oracle(&oracle)?;
            let scale = convergence::sup_h(&oracle);
            let gaps = study.oracle_gaps.as_ref().unwrap();
            oracle_rel = Some(gaps.last().unwrap() / if scale > 0.0 { scale } else { 1.0 });
            report.check(
                gaps.last().unwrap() <= gaps.first().unwrap(),
                format!("oracle gap finest {:.3e} ≤ coarsest {:.3e}", gaps.last().unwrap(), gaps.first().unwrap()),
            );
        }
        report.summary.push_str(&study.summary());
        for row in &study.mr_rows {
            self.audit_row(report, row);
        }
        report.check(
            study.is_monotone(c.monotone_floor),
            format!("L²(V) differences decrease (floor {:.0e})", c.monotone_floor),
        );
        if c.strictly_decreasing {
            report.check(study.diffs_l2v.windows(2).all(|w| w[1] < w[0]), "L²(V) differences strictly decreasing");
        }
        if let Some(max) = c.max_diff_l2v {
            let worst = study.diffs_l2v.iter().fold(0.0f64, |a, &b| a.max(b));
            report.check(worst <= max, format!("largest L²(V) difference {worst:.3e} ≤ {max:.0e}"));
        }
        if let Some(min) = c.min_rate {
            report.check(study.fitted_rate >= min, format!("fitted rate {:.4} ≥ {min}", study.fitted_rate));
        }
        if let (Some(max), Some(rel)) = (c.max_oracle_gap_rel, oracle_rel) {
            report.check(rel <= max, format!("finest relative oracle gap {rel:.3e} ≤ {max:.0e}"));
        }
        let ratios: Vec<f64> = study.mr_rows.iter().filter_map(|r| r.ratio_h).collect();
        if ratios.len() == study.mr_rows.len() && ratios.iter().all(|r| *r > 0.0) {
            let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().cloned().fold(0.0, f64::max);
            let spread = (hi - lo) / lo;
            report.check(
                spread <= c.max_ratio_spread,
                format!("MR(V,H)-to-data ratio spread {spread:.3e} ≤ {}", c.max_ratio_spread),
            );
        }
        if let (Some(l), true) = (self.preset.lipschitz, problem.family.is_symmetric()) {
            for (traj, &n) in study.trajectories.iter().zip(counts) {
                let sf = build_step_form(&problem.family, &Subdivision::uniform(problem.horizon(), n)?)?;
                let m = mr::check_lipschitz_telescoping(traj, &sf, l)?;
                report.check(m >= -c.junction_tol, format!("n={n}: junction margin {m:.3e} ≥ −{:.0e}", c.junction_tol));
            }
        }
        if let Some(tol) = c.scalar_exact_tol {
            self.scalar_exactness(report, &study, tol)?;
        }
        if !c.rescale_omegas.is_empty() {
            self.rescaling(report)?;
        }
        let mut mr_csv = format!("{MR_CSV_HEADER}\n");
        for row in &study.mr_rows {
            mr_csv.push_str(&row.csv_row());
            mr_csv.push('\n');
        }
        report.file("mr.csv", mr_csv);
        report.file("convergence.csv", study.csv());
        let mut dat = String::new();
        for (i, d) in study.diffs_l2v.iter().enumerate() {
            let _ = writeln!(dat, "{} {}", fmt_f64(study.mesh(i + 1)), fmt_f64(*d));
        }
        report.file("diff_l2v.dat", dat);
        if write_trajectories {
            let wanted = self.trajectory_counts();
            for (traj, &n) in study.trajectories.iter().zip(counts) {
                if wanted.contains(&n) {
                    let traj = if omega > 0.0 { solve(self.problem(), &Subdivision::uniform(problem.horizon(), n)?, traj.grid())? } else { traj.clone() };
                    self.write_trajectory(report, n, &traj);
                }
            }
        }
        Ok(study)
    }

    /// For dim-1 problems without load, compares `u_Λ(T)` with `exp(−∫p/g)`.
    fn scalar_exactness(&self, report: &mut Report, study: &RefinementStudy, tol: f64) -> Result<()> {
        let problem = self.problem();
        if problem.space().dim() != 1 || problem.load.is_some() {
            report.check(false, "scalar exactness needs a dim-1 problem without load");
            return Ok(());
        }
        let g = problem.space().gram_h()[(0, 0)];
        let mut integral = 0.0;
        for (t, w) in composite_gauss(0.0, problem.horizon(), 4096) {
            integral += w * problem.family.matrix(t)?[(0, 0)];
        }
        let exact = problem.u0[0] * (-integral / g).exp();
        let worst = study
            .trajectories
            .iter()
            .map(|t| (t.states().last().unwrap()[0] - exact).abs())
            .fold(0.0, f64::max);
        report.check(worst <= tol, format!("|u_Λ(T) − exp(−∫p)| {worst:.3e} ≤ {tol:.0e} on every ladder point"));
        Ok(())
    }

    fn rescaling(&self, report: &mut Report) -> Result<()> {
        let c = &self.config.checks;
        let problem = self.problem();
        let grid = self.output_grid();
        let mut worst: f64 = 0.0;
        for &n in &self.config.ladder.slab_counts {
            let sub = Subdivision::uniform(problem.horizon(), n)?;
            let base = solve(problem, &sub, &grid)?;
            let scale = convergence::sup_h(&base).max(f64::MIN_POSITIVE);
            for &omega in &c.rescale_omegas {
                let shifted = solve(&problem.rescaled(omega), &sub, &grid)?;
                for ((t, u), w) in grid.iter().zip(base.states()).zip(shifted.states()) {
                    worst = worst.max(problem.space().norm_h(&(w * (omega * t).exp() - u)) / scale);
                }
            }
        }
        report.check(
            worst <= c.rescale_tol,
            format!("rescaled solves match after e^(ωt) for ω ∈ {:?}: {worst:.3e} ≤ {:.0e}", c.rescale_omegas, c.rescale_tol),
        );
        Ok(())
    }

    pub fn invariance(&self, report: &mut Report) -> Result<()> {
        let c = &self.config.checks;
        let cfg = &self.config.invariance;
        let problem = self.problem();
        let set = self.config.convex_set(problem)?;
        let grid = sample_grid(problem.horizon(), cfg.t_samples);
        report.line(format!(
            "invariance ({}, {} set, {} metric, {} vectors × {} times, seed {})",
            self.preset.name,
            set.kind().name(),
            self.config.metric,
            cfg.vectors,
            cfg.t_samples,
            self.seed
        ));
        let criterion = if cfg.with_load {
            invariance::check_criterion_with_load(problem, &set, &grid, cfg.vectors, self.seed)?
        } else {
            invariance::check_criterion(&problem.family, &set, &grid, cfg.vectors, self.seed)?
        };
        let symmetric = match invariance::check_criterion_symmetric(&problem.family, &set, &grid, cfg.vectors, self.seed) {
            Ok(r) => Some(r.margin),
            Err(Error::Contract(_)) => None,
            Err(e) => return Err(e),
        };
        let nonnegative = matches!(set.kind(), SetKind::Box { lower, upper }
            if lower.iter().all(|&l| l == 0.0) && upper.iter().all(|u| u.is_infinite()));
        if nonnegative && problem.space().h_is_diagonal() {
            let off = invariance::max_off_diagonal(&problem.family, &grid)?;
            report.line(format!(
                "  stencil: largest off-diagonal entry {off:.3e} ({})",
                if off <= 0.0 { "criterion holds for every v at the sampled times" } else { "criterion fails for some v" }
            ));
        }
        let mut worst = invariance::Violation { worst: 0.0, t: 0.0 };
        let out_grid = self.output_grid();
        for &n in &self.config.ladder.slab_counts {
            let traj = solve(problem, &Subdivision::uniform(problem.horizon(), n)?, &out_grid)?;
            let v = invariance::audit_trajectory(&traj, &set)?;
            if v.worst > worst.worst {
                worst = v;
            }
        }
        let witness_norm = criterion.witness_norm(problem.space());
        report.line(format!(
            "  criterion margin {:.6e} (witness t = {}, ‖v‖_H = {:.3e}); symmetric margin {}; worst violation {:.3e} at t = {}",
            criterion.margin,
            criterion.witness_t,
            witness_norm,
            symmetric.map_or("n/a".into(), |m| format!("{m:.6e}")),
            worst.worst,
            worst.t
        ));
        let inside = set.contains(&problem.u0, 0.0);
        if c.expect_violation {
            report.check(criterion.margin < 0.0, format!("counterexample: criterion margin {:.3e} < 0", criterion.margin));
            report.check(worst.worst > 0.0, format!("counterexample: trajectory violation {:.3e} > 0", worst.worst));
        } else if criterion.margin >= -c.criterion_tol && inside {
            report.check(
                worst.worst <= c.violation_tol,
                format!("criterion holds ⇒ violation {:.3e} ≤ {:.0e}", worst.worst, c.violation_tol),
            );
        } else {
            report.line("  criterion not verified or u₀ outside the set; no invariance expected");
        }
        let row = InvarianceRow {
            preset: self.preset.name.to_string(),
            set_kind: set.kind().name().to_string(),
            metric: self.config.metric.clone(),
            criterion_margin: criterion.margin,
            symmetric_margin: symmetric,
            worst_violation: worst.worst,
            witness_t: criterion.witness_t,
            witness_norm,
        };
        report.file("invariance.csv", format!("{}\n{}\n", invariance::INVARIANCE_CSV_HEADER, row.csv_row()));
        Ok(())
    }

    pub fn run(&self, command: Command) -> Result<Report> {
        let mut report = Report::default();
        report.line(format!("evolveq {} — preset {}", env!("CARGO_PKG_VERSION"), self.preset.name));
        match command {
            Command::Constants => self.constants(&mut report)?,
            Command::Solve => self.solve(&mut report)?,
            Command::Converge => {
                self.converge(&mut report, false)?;
            }
            Command::Invariance => self.invariance(&mut report)?,
            Command::All => {
                self.constants(&mut report)?;
                self.converge(&mut report, true)?;
                self.invariance(&mut report)?;
            }
            Command::ListPresets => report.summary.push_str(&list_presets()),
        }
        let status = if report.failures.is_empty() {
            "all checks passed".to_string()
        } else {
            format!("{} check(s) failed", report.failures.len())
        };
        report.line(status);
        Ok(report)
    }
}

pub fn list_presets() -> String {
    let width = PRESETS.iter().map(|p| p.name.len()).max().unwrap_or(0);
    PRESETS.iter().map(|p| format!("{:<width$}  {}\n", p.name, p.description)).collect()
}

fn output_dir(cli: &Cli, config: &Config) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os("EVOLVEQ_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("evolveq-out"))
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownPreset(_) | Error::Argument(_) | Error::Subdivision(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if cli.command == Command::ListPresets {
        print!("{}", list_presets());
        return EXIT_OK;
    }
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be positive");
            return EXIT_USAGE;
        }
        // only fails when a global pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let outcome = (|| -> Result<(Report, PathBuf)> {
        let config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let dir = output_dir(&cli, &config);
        let experiment = Experiment::new(config, cli.seed)?;
        let report = experiment.run(cli.command)?;
        fs::create_dir_all(&dir)?;
        for (name, content) in &report.files {
            fs::write(dir.join(name), content)?;
        }
        fs::write(dir.join("summary.txt"), &report.summary)?;
        Ok((report, dir))
    })();
    match outcome {
        Ok((report, dir)) => {
            print!("{}", report.summary);
            println!("wrote {} file(s) to {}", report.files.len() + 1, dir.display());
            if report.failures.is_empty() {
                EXIT_OK
            } else {
                EXIT_CHECK
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = Config::from_toml("preset = \"scalar-sine\"\n[ladder]\nslab_counts = [4, 8]\n").unwrap();
        assert_eq!(c.preset, "scalar-sine");
        assert_eq!(c.ladder.slab_counts, vec![4, 8]);
        assert_eq!(c.invariance.vectors, 10_000);
        assert!(matches!(Config::from_toml("presett = \"x\""), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("preset = \"nope\""), Err(Error::UnknownPreset(_))));
        assert!(matches!(Config::from_toml("[ladder]\nslab_counts = [8, 12]"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[set]\nkind = \"disc\""), Err(Error::Config(_))));
    }

    #[test]
    fn constants_report_for_sine_preset() {
        let config = Config::from_toml("preset = \"scalar-sine\"").unwrap();
        let report = Experiment::new(config, None).unwrap().run(Command::Constants).unwrap();
        assert!(report.summary.contains("declared: M = 3  α = 1  ω = 0  L = 1"), "{}", report.summary);
        assert!(report.failures.is_empty());
    }

    #[test]
    fn converge_on_constant_preset_reports_zero_differences() {
        let config = Config::from_toml(
            "preset = \"scalar-constant\"\n[ladder]\nslab_counts = [2, 4, 8]\n[checks]\nmax_diff_l2v = 1e-12\n",
        )
        .unwrap();
        let report = Experiment::new(config, None).unwrap().run(Command::Converge).unwrap();
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        let csv = &report.files.iter().find(|(n, _)| n == "convergence.csv").unwrap().1;
        for line in csv.lines().skip(2) {
            let diff: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(diff <= 1e-12);
        }
    }

    #[test]
    fn presets_listed() {
        let table = list_presets();
        assert!(table.contains("scalar-decay") && table.contains("heat-1d-lipschitz") && table.contains("broken-coupling"));
    }
}
