//! Piecewise-linear (P1) finite elements on a uniform mesh of `[0, 1]`.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::space::GalerkinSpace;

/// Uniform mesh of `[0, 1]` with `elements` cells and nodes `0, h, …, 1`.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub elements: usize,
}

impl Mesh {
    pub fn new(elements: usize) -> Self {
        assert!(elements >= 1, "mesh needs at least one element");
        Mesh { elements }
    }

    pub fn h(&self) -> f64 {
        1.0 / self.elements as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.elements).map(|i| i as f64 * self.h()).collect()
    }

    pub fn dim(&self) -> usize {
        self.elements + 1
    }

    pub fn midpoint(&self, e: usize) -> f64 {
        (e as f64 + 0.5) * self.h()
    }

    pub fn mass_consistent(&self) -> DMatrix<f64> {
        let h = self.h();
        self.assemble(|_| [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]])
    }

    pub fn mass_lumped(&self) -> DMatrix<f64> {
        let h = self.h();
        self.assemble(|_| [[h / 2.0, 0.0], [0.0, h / 2.0]])
    }

    /// `∫ κ u′v′` with `κ` constant per element (`kappa(e)` = element average).
    pub fn stiffness(&self, kappa: impl Fn(usize) -> f64) -> DMatrix<f64> {
        let h = self.h();
        self.assemble(|e| {
            let k = kappa(e) / h;
            [[k, -k], [-k, k]]
        })
    }

    /// Matrix of `(u, v) ↦ ∫ b u′ v` in operator convention (row = test function).
    pub fn convection(&self, b: f64) -> DMatrix<f64> {
        // ∫_e φ_j′ φ_i = ±1/2 on each cell
        self.assemble(|_| [[-b / 2.0, b / 2.0], [-b / 2.0, b / 2.0]])
    }

    /// Robin boundary term `β₀ u(0)v(0) + β₁ u(1)v(1)`.
    pub fn robin(&self, beta0: f64, beta1: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        m[(0, 0)] = beta0;
        m[(n - 1, n - 1)] = beta1;
        m
    }

    fn assemble(&self, local: impl Fn(usize) -> [[f64; 2]; 2]) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for e in 0..self.elements {
            let k = local(e);
            for a in 0..2 {
                for b in 0..2 {
                    m[(e + a, e + b)] += k[a][b];
                }
            }
        }
        m
    }
}

/// P1 space on `[0, 1]` with homogeneous Dirichlet conditions and `interior`
/// nodes: `G_H` = consistent mass, `G_V` = stiffness + mass (the `H¹₀` inner
/// product with the full `H¹` norm).
pub fn p1_dirichlet_space(interior: usize) -> Result<GalerkinSpace> {
    let mesh = Mesh::new(interior + 1);
    let inner = |m: DMatrix<f64>| m.view((1, 1), (interior, interior)).into_owned();
    let mass = inner(mesh.mass_consistent());
    let stiff = inner(mesh.stiffness(|_| 1.0));
    let labels = mesh.nodes()[1..=interior].to_vec();
    GalerkinSpace::new(mass.clone(), stiff + mass)?.with_labels(labels)
}
