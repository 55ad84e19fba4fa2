//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::path::Path;
use std::process::Command;

use evolveq::convergence::{dyadic_ladder, gap_to_oracle, l2v_distance, refine, sup_h};
use evolveq::forms::{build_step_form, certify_omega, sample_grid, Subdivision};
use evolveq::invariance::{audit_trajectory, check_criterion, ConvexSet};
use evolveq::mr::check_lipschitz_telescoping;
use evolveq::presets::{self, LoadKind, PresetOptions, PRESETS};
use evolveq::propagator::{oracle_solve, solve, solve_step_form, ProblemData};
use evolveq::Result;

const SEED: u64 = 20240917;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn ladder() -> Vec<usize> {
    dyadic_ladder(8, 512)
}

fn preset(name: &str, options: PresetOptions) -> ProblemData {
    presets::build(name, &options).expect("preset builds").problem
}

fn zero_load() -> PresetOptions {
    PresetOptions { load: Some(LoadKind::Zero), ..Default::default() }
}

fn autonomous_collapse() -> Result<Outcome> {
    let cases = [
        ("scalar-constant", zero_load()),
        ("heat-1d-constant", zero_load()),
        ("heat-1d-constant", PresetOptions { load: Some(LoadKind::Constant), ..Default::default() }),
    ];
    let mut worst: f64 = 0.0;
    for (name, options) in cases {
        let problem = preset(name, options);
        let trajs = ladder()
            .iter()
            .map(|&n| solve(&problem, &Subdivision::uniform(problem.horizon(), n)?, &[]))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..trajs.len() {
            for j in i + 1..trajs.len() {
                worst = worst.max(l2v_distance(&trajs[i], &trajs[j])?);
            }
        }
    }
    outcome(worst <= 1e-11, format!("max pairwise L²(V) diff {worst:.3e} (≤ 1e-11)"))
}

fn scalar_exactness() -> Result<Outcome> {
    let cases: [(&str, f64); 3] = [
        ("scalar-decay", (-1.25f64).exp()),
        ("scalar-constant", (-1f64).exp()),
        ("scalar-sine", (-4.0 * std::f64::consts::PI).exp()),
    ];
    let mut worst: f64 = 0.0;
    for (name, exact) in cases {
        let problem = preset(name, zero_load());
        for n in ladder() {
            let traj = solve(&problem, &Subdivision::uniform(problem.horizon(), n)?, &[])?;
            let end = traj.states().last().unwrap()[0];
            worst = worst.max((end - exact).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |u_Λ(T) − exp(−∫p)| {worst:.3e} (≤ 1e-12)"))
}

fn oracle_equivalence() -> Result<Outcome> {
    let problem = preset("heat-1d-lipschitz", PresetOptions::default());
    let oracle = oracle_solve(&problem, 100_000)?;
    let traj = solve(&problem, &Subdivision::uniform(problem.horizon(), 256)?, &[])?;
    let rel = gap_to_oracle(&traj, &oracle)? / sup_h(&oracle);
    outcome(rel <= 1e-3, format!("sup-H relative gap {rel:.3e} (≤ 1e-3)"))
}

fn refinement_cauchy() -> Result<Outcome> {
    let problem = preset("heat-1d-lipschitz", PresetOptions::default());
    let study = refine(&problem, &ladder(), Some(0.5))?;
    let decreasing = study.diffs_l2v.windows(2).all(|w| w[1] < w[0]);
    let diffs: Vec<String> = study.diffs_l2v.iter().map(|d| format!("{d:.2e}")).collect();
    outcome(
        decreasing && study.fitted_rate >= 0.9,
        format!("diffs [{}] strictly decreasing: {decreasing}, fitted rate {:.3} (≥ 0.9)", diffs.join(" "), study.fitted_rate),
    )
}

/// Presets whose ellipticity certifies with `ω = 0`, with their default loads.
fn coercive_presets() -> Result<Vec<(&'static str, ProblemData, Option<f64>)>> {
    let mut out = Vec::new();
    for info in PRESETS {
        let p = info.build(&PresetOptions::default())?;
        let fam = &p.problem.family;
        if certify_omega(fam, &sample_grid(fam.horizon(), 65))?.constants.omega == 0.0 {
            out.push((info.name, p.problem, p.lipschitz));
        }
    }
    Ok(out)
}

struct LadderAudits {
    lem3: f64,
    indepmax: f64,
    chain: f64,
    product: f64,
    presets: usize,
}

fn ladder_audits() -> Result<LadderAudits> {
    let mut a = LadderAudits { lem3: f64::INFINITY, indepmax: f64::INFINITY, chain: 0.0, product: 0.0, presets: 0 };
    for (_, problem, lipschitz) in coercive_presets()? {
        a.presets += 1;
        let study = refine(&problem, &ladder(), lipschitz)?;
        for row in &study.mr_rows {
            a.lem3 = a.lem3.min(row.margin_lem3.unwrap_or(f64::NEG_INFINITY));
            a.chain = a.chain.max(row.residual_chain.unwrap_or(f64::INFINITY));
            if problem.family.is_symmetric() {
                a.indepmax = a.indepmax.min(row.margin_indepmax.unwrap_or(f64::NEG_INFINITY));
                a.product = a.product.max(row.residual_product.unwrap_or(f64::INFINITY));
            }
        }
    }
    Ok(a)
}

fn energy_bound(a: &LadderAudits) -> Result<Outcome> {
    outcome(a.lem3 >= 0.0, format!("min margin {:.3e} over {} presets × {} ladder points (≥ 0)", a.lem3, a.presets, ladder().len()))
}

fn slab_bound(a: &LadderAudits) -> Result<Outcome> {
    outcome(a.indepmax >= -1e-10, format!("min per-slab margin {:.3e} on symmetric presets (≥ −1e-10)", a.indepmax))
}

fn chain_product(a: &LadderAudits) -> Result<Outcome> {
    outcome(
        a.chain <= 1e-8 && a.product <= 1e-8,
        format!("max chain residual {:.3e}, max product residual {:.3e} (≤ 1e-8)", a.chain, a.product),
    )
}

fn h_boundedness() -> Result<Outcome> {
    let problem = preset("heat-1d-lipschitz", PresetOptions::default());
    let study = refine(&problem, &ladder(), Some(0.5))?;
    let ratios: Vec<f64> = study.mr_rows.iter().map(|r| r.ratio_h.unwrap_or(f64::NAN)).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &r| (l.min(r), h.max(r)));
    let spread = (hi - lo) / lo;
    let mut junction = f64::INFINITY;
    for &n in &ladder() {
        let sf = build_step_form(&problem.family, &Subdivision::uniform(problem.horizon(), n)?)?;
        let traj = solve_step_form(&problem, &sf, &[])?;
        junction = junction.min(check_lipschitz_telescoping(&traj, &sf, 0.5)?);
    }
    outcome(
        spread <= 0.1 && junction >= -1e-9,
        format!("ratio in [{lo:.4}, {hi:.4}], spread {spread:.3e} (≤ 0.1); min junction margin {junction:.3e} (≥ −1e-9)"),
    )
}

fn invariance() -> Result<Outcome> {
    let grid = sample_grid(1.0, 33);
    let heat = preset("heat-1d-lipschitz", zero_load());
    let set = ConvexSet::nonnegative(heat.space());
    assert!(set.contains(&heat.u0, 0.0));
    let margin = check_criterion(&heat.family, &set, &grid, 10_000, SEED)?.margin;
    let mut violation: f64 = 0.0;
    for n in ladder() {
        let traj = solve(&heat, &Subdivision::uniform(1.0, n)?, &grid)?;
        violation = violation.max(audit_trajectory(&traj, &set)?.worst);
    }
    let broken = preset("broken-coupling", zero_load());
    let broken_margin = check_criterion(&broken.family, &set, &grid, 10_000, SEED)?.margin;
    let mut broken_violation: f64 = 0.0;
    for n in ladder() {
        let traj = solve(&broken, &Subdivision::uniform(1.0, n)?, &grid)?;
        broken_violation = broken_violation.max(audit_trajectory(&traj, &set)?.worst);
    }
    outcome(
        margin >= -1e-12 && violation <= 1e-10 && broken_margin < 0.0 && broken_violation > 0.0,
        format!(
            "heat: margin {margin:.3e}, violation {violation:.3e}; broken-coupling: margin {broken_margin:.3e}, violation {broken_violation:.3e}"
        ),
    )
}

fn rescaling() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for name in ["heat-1d-lipschitz", "scalar-sine", "advection-diffusion-1d"] {
        let problem = preset(name, zero_load());
        let horizon = problem.horizon();
        let sub = Subdivision::uniform(horizon, 64)?;
        let grid: Vec<f64> = (0..=200).map(|i| horizon * i as f64 / 200.0).collect();
        let base = solve(&problem, &sub, &grid)?;
        let scale = sup_h(&base);
        for omega in [1.0, 5.0] {
            let shifted = solve(&problem.rescaled(omega), &sub, &grid)?;
            for ((t, u), w) in grid.iter().zip(base.states()).zip(shifted.states()) {
                let back = w * (omega * t).exp();
                worst = worst.max(problem.space().norm_h(&(back - u)) / scale);
            }
        }
    }
    outcome(worst <= 1e-9, format!("max relative gap {worst:.3e} for ω ∈ {{1, 5}}, f = 0 (≤ 1e-9)"))
}

fn determinism() -> Result<Outcome> {
    let exe = env!("CARGO_BIN_EXE_evolveq");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/determinism.toml");
    let dir = tempfile::tempdir()?;
    let mut outs = Vec::new();
    for threads in [1, 4] {
        let out = dir.path().join(format!("threads-{threads}"));
        let status = Command::new(exe)
            .arg("all")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--seed", "7", "--threads", &threads.to_string()])
            .output()?;
        if !status.status.success() {
            return outcome(false, format!("`all` exited with {}: {}", status.status, String::from_utf8_lossy(&status.stderr)));
        }
        outs.push(out);
    }
    let mut compared = 0;
    let mut names: Vec<_> = std::fs::read_dir(&outs[0])?
        .map(|e| e.map(|e| e.file_name()))
        .collect::<std::io::Result<Vec<_>>>()?;
    names.sort();
    for name in names.iter().filter(|n| n.to_string_lossy().ends_with(".csv")) {
        let a = std::fs::read(outs[0].join(name))?;
        let b = std::fs::read(outs[1].join(name))?;
        if a != b {
            return outcome(false, format!("{} differs between 1 and 4 threads", name.to_string_lossy()));
        }
        compared += 1;
    }
    outcome(compared >= 3, format!("{compared} CSV files byte-identical across 1 and 4 threads"))
}

fn main() {
    let audits = ladder_audits();
    let criteria: Vec<(&str, Box<dyn Fn() -> Result<Outcome>>)> = vec![
        ("autonomous collapse", Box::new(autonomous_collapse)),
        ("scalar exactness", Box::new(scalar_exactness)),
        ("oracle equivalence", Box::new(oracle_equivalence)),
        ("refinement Cauchy behaviour", Box::new(refinement_cauchy)),
        ("energy bound", Box::new(|| energy_bound(audits.as_ref().map_err(clone_err)?))),
        ("per-slab sup bound", Box::new(|| slab_bound(audits.as_ref().map_err(clone_err)?))),
        ("chain and product rules", Box::new(|| chain_product(audits.as_ref().map_err(clone_err)?))),
        ("MR(V,H) boundedness", Box::new(h_boundedness)),
        ("invariance", Box::new(invariance)),
        ("rescaling equivariance", Box::new(rescaling)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!("criterion {:>2} {:<28} {}  {}", i + 1, name, if pass { "PASS" } else { "FAIL" }, detail);
    }
    println!("acceptance: {} passed, {} failed", criteria.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn clone_err(e: &evolveq::Error) -> evolveq::Error {
    evolveq::Error::Contract(e.to_string())
}

