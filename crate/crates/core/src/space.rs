//! Finite-dimensional model of the triple `V ↪ H ↪ V′`.
//!
//! A [`GalerkinSpace`] is a coefficient space `ℝᵈ` carrying two inner
//! products, `(u|v)_H = uᵀ G_H v` and `(u|v)_V = uᵀ G_V v`. Functionals on `V`
//! are represented by their pairings against the basis ([`DualVector`]); the
//! `V′` norm is realised through the inverse of `G_V`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct GalerkinSpace {
    gram_h: DMatrix<f64>,
    gram_v: DMatrix<f64>,
    chol_h: Cholesky<f64, Dyn>,
    chol_v: Cholesky<f64, Dyn>,
    labels: Option<Vec<f64>>,
}

/// Pairings `⟨g, φᵢ⟩` of a functional against the basis.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector(pub DVector<f64>);

impl DualVector {
    pub fn zeros(dim: usize) -> Self {
        DualVector(DVector::zeros(dim))
    }

    pub fn coeffs(&self) -> &DVector<f64> {
        &self.0
    }
}

impl GalerkinSpace {
    pub fn new(gram_h: DMatrix<f64>, gram_v: DMatrix<f64>) -> Result<Self> {
        let dim = gram_h.nrows();
        if dim == 0 || !gram_h.is_square() {
            return Err(Error::Argument("H Gram matrix must be square and non-empty".into()));
        }
        if gram_v.nrows() != dim || gram_v.ncols() != dim {
            return Err(Error::Dimension { expected: dim, got: gram_v.nrows() });
        }
        for (which, g) in [("H", &gram_h), ("V", &gram_v)] {
            let asymmetry = linalg::asymmetry(g);
            if !(asymmetry <= SYMMETRY_TOL) {
                return Err(Error::NotSymmetric { which, asymmetry });
            }
        }
        let gram_h = linalg::symmetric_part(&gram_h);
        let gram_v = linalg::symmetric_part(&gram_v);
        let chol_h = linalg::cholesky(&gram_h, "H Gram")?;
        let chol_v = linalg::cholesky(&gram_v, "V Gram")?;
        Ok(GalerkinSpace { gram_h, gram_v, chol_h, chol_v, labels: None })
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.gram_h.nrows()
    }

    pub fn gram_h(&self) -> &DMatrix<f64> {
        &self.gram_h
    }

    pub fn gram_v(&self) -> &DMatrix<f64> {
        &self.gram_v
    }

    pub fn chol_h(&self) -> &Cholesky<f64, Dyn> {
        &self.chol_h
    }

    pub fn chol_v(&self) -> &Cholesky<f64, Dyn> {
        &self.chol_v
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    /// True when `G_H` is diagonal (lumped metric).
    pub fn h_is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.gram_h[(i, j)] == 0.0))
    }

    pub fn norm_h(&self, u: &DVector<f64>) -> f64 {
        self.gram_h.dot_quadratic(u).max(0.0).sqrt()
    }

    pub fn norm_v(&self, u: &DVector<f64>) -> f64 {
        self.gram_v.dot_quadratic(u).max(0.0).sqrt()
    }

    pub fn inner_h(&self, u: &DVector<f64>, v: &DVector<f64>) -> f64 {
        u.dot(&(&self.gram_h * v))
    }

    /// The functional `v ↦ (u|v)_H`.
    pub fn h_representation(&self, u: &DVector<f64>) -> DualVector {
        DualVector(&self.gram_h * u)
    }

    /// H-coordinates `G_H⁻¹ g` of a functional that lies in `H`.
    pub fn riesz_h(&self, g: &DualVector) -> DVector<f64> {
        self.chol_h.solve(&g.0)
    }

    /// `‖g‖_{V′} = sqrt(gᵀ G_V⁻¹ g)`.
    pub fn dual_norm(&self, g: &DualVector) -> Result<f64> {
        if g.0.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: g.0.len() });
        }
        let x = self.chol_v.solve(&g.0);
        if x.iter().any(|e| !e.is_finite()) {
            return Err(Error::SingularGram);
        }
        Ok(g.0.dot(&x).max(0.0).sqrt())
    }

    /// Smallest `c` with `‖u‖_H ≤ c‖u‖_V`: the square root of the largest
    /// eigenvalue of the pencil `(G_H, G_V)`.
    pub fn embedding_constant(&self) -> Result<f64> {
        let values = linalg::pencil_eigenvalues(&self.gram_h, &self.chol_v)?;
        let top = values[values.len() - 1];
        if !(top.is_finite() && top > 0.0) {
            return Err(Error::Eigen(format!("largest pencil eigenvalue {top}")));
        }
        Ok(top.sqrt())
    }
}

/// Quadratic form helper used throughout.
pub(crate) trait Quadratic {
    fn dot_quadratic(&self, u: &DVector<f64>) -> f64;
}

impl Quadratic for DMatrix<f64> {
    fn dot_quadratic(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(self * u))
    }
}

/// `‖g‖_{V′}` for a functional `g` (free-function form of [`GalerkinSpace::dual_norm`]).
pub fn dual_norm(space: &GalerkinSpace, g: &DualVector) -> Result<f64> {
    space.dual_norm(g)
}

pub fn embedding_constant(space: &GalerkinSpace) -> Result<f64> {
    space.embedding_constant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn scalar(h: f64, v: f64) -> GalerkinSpace {
        GalerkinSpace::new(DMatrix::from_element(1, 1, h), DMatrix::from_element(1, 1, v)).unwrap()
    }

    #[test]
    fn dual_norm_scalar() {
        let s = scalar(1.0, 2.0);
        let n = s.dual_norm(&DualVector(DVector::from_element(1, 1.0))).unwrap();
        assert_relative_eq!(n, 0.7071067812, epsilon = 1e-10);
    }

    #[test]
    fn dual_norm_of_zero() {
        let s = fem::p1_dirichlet_space(7).unwrap();
        assert_eq!(s.dual_norm(&DualVector::zeros(7)).unwrap(), 0.0);
    }

    #[test]
    fn dual_norm_dimension_checked() {
        let s = scalar(1.0, 1.0);
        assert!(matches!(s.dual_norm(&DualVector::zeros(2)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn embedding_constant_identical_norms() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let s = GalerkinSpace::new(g.clone(), g).unwrap();
        assert_relative_eq!(s.embedding_constant().unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn embedding_constant_scalar_ratio() {
        assert_relative_eq!(scalar(1.0, 4.0).embedding_constant().unwrap(), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn rejects_bad_grams() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(matches!(
            GalerkinSpace::new(asym, DMatrix::identity(2, 2)),
            Err(Error::NotSymmetric { which: "H", .. })
        ));
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            GalerkinSpace::new(DMatrix::identity(2, 2), indefinite),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn dirichlet_embedding_constant_approaches_poincare_value() {
        let s = fem::p1_dirichlet_space(63).unwrap();
        let c = s.embedding_constant().unwrap();
        let continuum = 1.0 / (1.0 + std::f64::consts::PI.powi(2)).sqrt();
        assert!((c - continuum).abs() <= 2e-3, "c_H = {c}, continuum {continuum}");
    }

    #[test]
    fn dual_norm_of_hat_sum_regression() {
        let s = fem::p1_dirichlet_space(63).unwrap();
        let ones = DVector::from_element(63, 1.0);
        let g = s.h_representation(&ones);
        // Oracle: LU solve of G_V x = g, independent of the Cholesky path.
        let x = s.gram_v().clone().lu().solve(&g.0).unwrap();
        let oracle = g.0.dot(&x).sqrt();
        let value = s.dual_norm(&g).unwrap();
        assert_relative_eq!(value, oracle, max_relative = 1e-12);
        assert_relative_eq!(value, HAT_SUM_DUAL_NORM, max_relative = 1e-12);
    }

    // Frozen from the LU oracle above (63 interior nodes, h = 1/64).
    const HAT_SUM_DUAL_NORM: f64 = 0.275_090_069_757_374_5;

    fn random_space(dim: usize, seed: u64) -> GalerkinSpace {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut spd = |shift: f64| {
            let m = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
            &m * m.transpose() + DMatrix::identity(dim, dim) * shift
        };
        let h = spd(0.5);
        let v = spd(0.1) + &h;
        GalerkinSpace::new(h, v).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn embedding_bound_holds(seed in 0u64..1000, u in prop::collection::vec(-10.0f64..10.0, 5)) {
            let s = random_space(5, seed);
            let c = s.embedding_constant().unwrap();
            let u = DVector::from_vec(u);
            prop_assert!(s.norm_h(&u) <= c * s.norm_v(&u) * (1.0 + 1e-10) + 1e-300);
        }

        #[test]
        fn dual_norm_of_h_representation_bounded(seed in 0u64..1000, u in prop::collection::vec(-10.0f64..10.0, 5)) {
            let s = random_space(5, seed);
            let c = s.embedding_constant().unwrap();
            let u = DVector::from_vec(u);
            let g = s.h_representation(&u);
            prop_assert!(s.dual_norm(&g).unwrap() <= c * s.norm_h(&u) * (1.0 + 1e-10) + 1e-300);
        }

        #[test]
        fn dual_norm_is_a_norm(
            seed in 0u64..1000,
            a in prop::collection::vec(-10.0f64..10.0, 4),
            b in prop::collection::vec(-10.0f64..10.0, 4),
            scale in -5.0f64..5.0,
        ) {
            let s = random_space(4, seed);
            let a = DualVector(DVector::from_vec(a));
            let b = DualVector(DVector::from_vec(b));
            let na = s.dual_norm(&a).unwrap();
            let nb = s.dual_norm(&b).unwrap();
            let nsum = s.dual_norm(&DualVector(&a.0 + &b.0)).unwrap();
            prop_assert!(nsum <= (na + nb) * (1.0 + 1e-10));
            let nscaled = s.dual_norm(&DualVector(&a.0 * scale)).unwrap();
            prop_assert!((nscaled - scale.abs() * na).abs() <= 1e-10 * (1.0 + na * scale.abs()));
        }
    }
}
