//! Named problem presets used by the CLI, the tests and the book.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::Mesh;
use crate::forms::{FormConstants, FormFamily};
use crate::propagator::{LoadFn, ProblemData};
use crate::space::{DualVector, GalerkinSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Metric {
    /// Diagonal (row-sum) mass matrix; box projection is a clamp.
    #[default]
    Lumped,
    Consistent,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Lumped => "lumped",
            Metric::Consistent => "consistent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lumped" => Ok(Metric::Lumped),
            "consistent" => Ok(Metric::Consistent),
            other => Err(Error::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadKind {
    Zero,
    /// `f(t, x) = amplitude · (1 + sin(2πt) cos(πx))` (scalar presets: `amplitude · (1 + sin 2πt)`).
    Smooth,
    /// Time-independent `f ≡ amplitude`.
    Constant,
}

impl LoadKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(LoadKind::Zero),
            "smooth" => Ok(LoadKind::Smooth),
            "constant" => Ok(LoadKind::Constant),
            other => Err(Error::Config(format!("unknown load kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LoadKind::Zero => "zero",
            LoadKind::Smooth => "smooth",
            LoadKind::Constant => "constant",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PresetOptions {
    pub elements: Option<usize>,
    pub horizon: Option<f64>,
    /// `None` selects the preset's default load.
    pub load: Option<LoadKind>,
    pub amplitude: f64,
    pub metric: Metric,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions { elements: None, horizon: None, load: None, amplitude: 1.0, metric: Metric::Lumped }
    }
}

/// A built preset: the problem plus analytically known constants.
#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub problem: ProblemData,
    /// Analytic Lipschitz bound in the `V → V′` norm, when known.
    pub lipschitz: Option<f64>,
    /// Node coordinates for P1 presets.
    pub nodes: Option<Vec<f64>>,
}

pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
    build: fn(&PresetOptions) -> Result<Preset>,
}

impl PresetInfo {
    pub fn build(&self, options: &PresetOptions) -> Result<Preset> {
        (self.build)(options)
    }
}

pub static PRESETS: &[PresetInfo] = &[
    PresetInfo {
        name: "scalar-decay",
        description: "dim 1, A(t) = [1 + t/2], u0 = 1, T = 1; f = 0 by default",
        build: scalar_decay,
    },
    PresetInfo {
        name: "scalar-constant",
        description: "dim 1, A = [1], u0 = 1, T = 1; autonomous",
        build: scalar_constant,
    },
    PresetInfo {
        name: "scalar-sine",
        description: "dim 1, A(t) = [2 + sin t], u0 = 1, T = 2π; M = 3, α = 1, L = 1",
        build: scalar_sine,
    },
    PresetInfo {
        name: "heat-1d-lipschitz",
        description: "P1 on [0,1], a(t;u,v) = ∫ κ u′v′ + u(0)v(0) + u(1)v(1), κ = 1 + ½ x sin t; L = ½",
        build: heat_lipschitz,
    },
    PresetInfo {
        name: "heat-1d-constant",
        description: "P1 on [0,1], κ ≡ 1 with Robin ends; autonomous counterpart of heat-1d-lipschitz",
        build: heat_constant,
    },
    PresetInfo {
        name: "broken-coupling",
        description: "heat-1d-lipschitz with every off-diagonal coupling sign flipped (same spectrum, not positivity preserving)",
        build: broken_coupling,
    },
    PresetInfo {
        name: "advection-diffusion-1d",
        description: "non-symmetric: heat-1d-lipschitz plus ∫ cos(t) u′ v; 16 elements by default",
        build: advection_diffusion,
    },
];

pub fn find(name: &str) -> Result<&'static PresetInfo> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

pub fn build(name: &str, options: &PresetOptions) -> Result<Preset> {
    find(name)?.build(options)
}

fn unit_scalar_space() -> Arc<GalerkinSpace> {
    Arc::new(
        GalerkinSpace::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0))
            .expect("1×1 identity Grams are valid"),
    )
}

fn scalar_load(kind: LoadKind, amplitude: f64) -> Option<LoadFn> {
    match kind {
        LoadKind::Zero => None,
        LoadKind::Constant => Some(Arc::new(move |_| DualVector(DVector::from_element(1, amplitude)))),
        LoadKind::Smooth => Some(Arc::new(move |t: f64| {
            DualVector(DVector::from_element(1, amplitude * (1.0 + (2.0 * PI * t).sin())))
        })),
    }
}

fn scalar_preset(
    name: &'static str,
    options: &PresetOptions,
    default_horizon: f64,
    p: fn(f64) -> f64,
    declared: FormConstants,
) -> Result<Preset> {
    let horizon = options.horizon.unwrap_or(default_horizon);
    let family = FormFamily::new(unit_scalar_space(), horizon, true, move |t| DMatrix::from_element(1, 1, p(t)))?
        .with_declared(declared);
    let load = scalar_load(options.load.unwrap_or(LoadKind::Zero), options.amplitude);
    let problem = ProblemData::new(family, DVector::from_element(1, 1.0), load)?;
    Ok(Preset { name, problem, lipschitz: declared.lipschitz, nodes: None })
}

fn scalar_decay(options: &PresetOptions) -> Result<Preset> {
    let horizon = options.horizon.unwrap_or(1.0);
    let declared = FormConstants { m: 1.0 + horizon / 2.0, alpha: 1.0, omega: 0.0, lipschitz: Some(0.5) };
    scalar_preset("scalar-decay", options, 1.0, |t| 1.0 + t / 2.0, declared)
}

fn scalar_constant(options: &PresetOptions) -> Result<Preset> {
    let declared = FormConstants { m: 1.0, alpha: 1.0, omega: 0.0, lipschitz: Some(0.0) };
    scalar_preset("scalar-constant", options, 1.0, |_| 1.0, declared)
}

fn scalar_sine(options: &PresetOptions) -> Result<Preset> {
    let declared = FormConstants { m: 3.0, alpha: 1.0, omega: 0.0, lipschitz: Some(1.0) };
    scalar_preset("scalar-sine", options, 2.0 * PI, |t| 2.0 + t.sin(), declared)
}

/// Pieces shared by the P1 presets.
struct P1Setup {
    mesh: Mesh,
    space: Arc<GalerkinSpace>,
    mass: DMatrix<f64>,
}

fn p1_setup(elements: usize, metric: Metric) -> Result<P1Setup> {
    if elements < 2 {
        return Err(Error::Config(format!("need at least 2 elements, got {elements}")));
    }
    let mesh = Mesh::new(elements);
    let mass = match metric {
        Metric::Lumped => mesh.mass_lumped(),
        Metric::Consistent => mesh.mass_consistent(),
    };
    let gram_v = mesh.stiffness(|_| 1.0) + &mass;
    let space = Arc::new(GalerkinSpace::new(mass.clone(), gram_v)?.with_labels(mesh.nodes())?);
    Ok(P1Setup { mesh, space, mass })
}

/// Nonnegative hat `max(0, 1 − 4|x − 0.3|)` at the nodes.
fn hat_initial(mesh: &Mesh) -> DVector<f64> {
    DVector::from_iterator(mesh.dim(), mesh.nodes().into_iter().map(|x| (1.0 - 4.0 * (x - 0.3).abs()).max(0.0)))
}

fn p1_load(setup: &P1Setup, kind: LoadKind, amplitude: f64) -> Option<LoadFn> {
    let nodes = setup.mesh.nodes();
    let mass = setup.mass.clone();
    match kind {
        LoadKind::Zero => None,
        LoadKind::Constant => {
            let g = &mass * DVector::from_element(nodes.len(), amplitude);
            Some(Arc::new(move |_| DualVector(g.clone())))
        }
        LoadKind::Smooth => Some(Arc::new(move |t: f64| {
            let s = (2.0 * PI * t).sin();
            let nodal = DVector::from_iterator(
                nodes.len(),
                nodes.iter().map(|&x| amplitude * (1.0 + s * (PI * x).cos())),
            );
            DualVector(&mass * nodal)
        })),
    }
}

/// `∫ κ(t,x) u′v′` split as `K₀ + sin(t) K₁` for `κ = 1 + ½ x sin t`.
fn lipschitz_stiffness(mesh: &Mesh) -> (DMatrix<f64>, DMatrix<f64>) {
    let k0 = mesh.stiffness(|_| 1.0) + mesh.robin(1.0, 1.0);
    let k1 = mesh.stiffness(|e| 0.5 * mesh.midpoint(e));
    (k0, k1)
}

fn heat_preset(name: &'static str, options: &PresetOptions, time_dependent: bool) -> Result<Preset> {
    let setup = p1_setup(options.elements.unwrap_or(32), options.metric)?;
    let horizon = options.horizon.unwrap_or(1.0);
    let (k0, k1) = lipschitz_stiffness(&setup.mesh);
    let family = if time_dependent {
        FormFamily::new(setup.space.clone(), horizon, true, move |t| &k0 + &k1 * t.sin())?
    } else {
        FormFamily::constant(setup.space.clone(), horizon, k0)?
    };
    let kind = options.load.unwrap_or(if time_dependent { LoadKind::Smooth } else { LoadKind::Zero });
    let load = p1_load(&setup, kind, options.amplitude);
    let problem = ProblemData::new(family, hat_initial(&setup.mesh), load)?;
    let lipschitz = Some(if time_dependent { 0.5 } else { 0.0 });
    Ok(Preset { name, problem, lipschitz, nodes: Some(setup.mesh.nodes()) })
}

fn heat_lipschitz(options: &PresetOptions) -> Result<Preset> {
    heat_preset("heat-1d-lipschitz", options, true)
}

fn heat_constant(options: &PresetOptions) -> Result<Preset> {
    heat_preset("heat-1d-constant", options, false)
}

fn broken_coupling(options: &PresetOptions) -> Result<Preset> {
    let setup = p1_setup(options.elements.unwrap_or(32), options.metric)?;
    let horizon = options.horizon.unwrap_or(1.0);
    let (k0, k1) = lipschitz_stiffness(&setup.mesh);
    // D K D with D = diag(±1): same spectrum, positive off-diagonal couplings
    let n = setup.mesh.dim();
    let flip = DMatrix::from_diagonal(&DVector::from_iterator(n, (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })));
    let (k0, k1) = (&flip * k0 * &flip, &flip * k1 * &flip);
    let family = FormFamily::new(setup.space.clone(), horizon, true, move |t| &k0 + &k1 * t.sin())?;
    let load = p1_load(&setup, options.load.unwrap_or(LoadKind::Zero), options.amplitude);
    let problem = ProblemData::new(family, hat_initial(&setup.mesh), load)?;
    Ok(Preset { name: "broken-coupling", problem, lipschitz: None, nodes: Some(setup.mesh.nodes()) })
}

fn advection_diffusion(options: &PresetOptions) -> Result<Preset> {
    let setup = p1_setup(options.elements.unwrap_or(16), options.metric)?;
    let horizon = options.horizon.unwrap_or(1.0);
    let (k0, k1) = lipschitz_stiffness(&setup.mesh);
    let c = setup.mesh.convection(1.0);
    let family = FormFamily::new(setup.space.clone(), horizon, false, move |t| &k0 + &k1 * t.sin() + &c * t.cos())?;
    let load = p1_load(&setup, options.load.unwrap_or(LoadKind::Smooth), options.amplitude);
    let problem = ProblemData::new(family, hat_initial(&setup.mesh), load)?;
    Ok(Preset { name: "advection-diffusion-1d", problem, lipschitz: Some(1.5), nodes: Some(setup.mesh.nodes()) })
}
