//! Dense linear-algebra kernels: symmetric-definite pencils, the matrix
//! exponential and the Gauss-Legendre rules used for all time integrals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry `‖A − Aᵀ‖_F / ‖A‖_F` (zero for the zero matrix).
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn cholesky(a: &DMatrix<f64>, which: &'static str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite { which })
}

/// Eigen-decomposition of the pencil `(a, b)` with `a` symmetric and `b` SPD.
///
/// Eigenvalues are sorted ascending and the eigenvectors are `b`-orthonormal:
/// `Wᵀ b W = I`, `Wᵀ a W = diag(values)`.
#[derive(Clone, Debug)]
pub struct PencilEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn pencil_eigen(a: &DMatrix<f64>, b_chol: &Cholesky<f64, Dyn>) -> Result<PencilEigen> {
    let n = a.nrows();
    let l = b_chol.l();
    // C = L⁻¹ A L⁻ᵀ
    let y = l
        .solve_lower_triangular(a)
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    let c = symmetric_part(&c);
    if c.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigen("non-finite reduced matrix".into()));
    }
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        q.set_column(dst, &eig.eigenvectors.column(src));
    }
    // W = L⁻ᵀ Q
    let vectors = l
        .tr_solve_lower_triangular(&q)
        .ok_or_else(|| Error::Eigen("triangular solve failed".into()))?;
    Ok(PencilEigen { values, vectors })
}

/// Generalized eigenvalues of the pencil `(a, b)`, ascending.
pub fn pencil_eigenvalues(a: &DMatrix<f64>, b_chol: &Cholesky<f64, Dyn>) -> Result<DVector<f64>> {
    Ok(pencil_eigen(a, b_chol)?.values)
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// Backward-error thresholds for the [m/m] approximants in double precision.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA_13: f64 = 5.371920351148152;

// Above this many squarings the result is meaningless in double precision.
const MAX_SQUARINGS: i32 = 1000;

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut even = &ident * b[0];
    let mut odd = &ident * b[1];
    let mut power = ident.clone();
    let m = b.len() - 1;
    for k in 1..=m / 2 {
        power = &power * &a2;
        even += &power * b[2 * k];
        if 2 * k + 1 <= m {
            odd += &power * b[2 * k + 1];
        }
    }
    (a * odd, even)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

/// Matrix exponential by scaling and squaring with diagonal Padé approximants
/// (orders 3 through 13, order 13 with scaling for large norms).
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(a);
    if !norm.is_finite() || a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalRange { norm });
    }
    let solve = |u: DMatrix<f64>, v: DMatrix<f64>| -> Result<DMatrix<f64>> {
        let p = &v + &u;
        let q = v - u;
        q.lu().solve(&p).ok_or(Error::NumericalRange { norm })
    };
    for &(m, theta) in THETA.iter() {
        if norm <= theta {
            let b: &[f64] = match m {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, b);
            return solve(u, v);
        }
    }
    let s = (norm / THETA_13).log2().ceil().max(0.0) as i32;
    if s > MAX_SQUARINGS {
        return Err(Error::NumericalRange { norm });
    }
    let scaled = a * 2f64.powi(-s);
    let (u, v) = pade13(&scaled);
    let mut x = solve(u, v)?;
    for _ in 0..s {
        x = &x * &x;
    }
    if x.iter().any(|e| !e.is_finite()) {
        return Err(Error::NumericalRange { norm });
    }
    Ok(x)
}

/// `φ₁(z) = (eᶻ − 1)/z` with `φ₁(0) = 1`, accurate near zero.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    } else {
        z.exp_m1() / z
    }
}

/// Four-point Gauss-Legendre nodes and weights on `[-1, 1]`.
pub const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Composite four-point Gauss rule on `[a, b]` with `panels` equal panels.
pub fn composite_gauss(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let panels = panels.max(1);
    let width = (b - a) / panels as f64;
    let mut rule = Vec::with_capacity(4 * panels);
    for p in 0..panels {
        let lo = a + width * p as f64;
        push_panel(&mut rule, lo, lo + width);
    }
    rule
}

fn push_panel(rule: &mut Vec<(f64, f64)>, lo: f64, hi: f64) {
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    for &(x, w) in GAUSS4.iter() {
        rule.push((mid + half * x, half * w));
    }
}

/// Four-point Gauss rule on `[a, b] ⊆ [origin, origin + slab_len]` with panels
/// graded geometrically toward `origin`.
///
/// Solutions of a frozen slab problem carry transients `e^{−λ(t−origin)}` for
/// every eigenvalue `λ ≤ stiffness`; the grading keeps `λ·width ≲ 1` on the
/// panels where those transients are alive.
pub fn graded_gauss(origin: f64, a: f64, b: f64, slab_len: f64, stiffness: f64) -> Vec<(f64, f64)> {
    debug_assert!(a >= origin - 1e-12 && b >= a);
    if b <= a {
        return Vec::new();
    }
    let mut levels = 0;
    let mut width = slab_len;
    while width * stiffness > 0.05 && levels < 60 {
        width *= 0.5;
        levels += 1;
    }
    let mut cuts = Vec::with_capacity(levels + 3);
    cuts.push(a);
    cuts.push(b);
    let mut w = slab_len;
    for _ in 0..levels {
        w *= 0.5;
        let c = origin + w;
        if c > a && c < b {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut rule = Vec::with_capacity(8 * cuts.len());
    for pair in cuts.windows(2) {
        let (lo, hi) = (pair[0], pair[1]);
        // modes with λ·(lo − origin) > 40 are below roundoff on this piece
        let offset = lo - origin;
        let relevant = if offset > 0.0 { stiffness.min(40.0 / offset) } else { stiffness };
        let panels = ((relevant * (hi - lo) / 0.5).ceil() as usize).clamp(2, 256);
        let step = (hi - lo) / panels as f64;
        for p in 0..panels {
            let right = if p + 1 == panels { hi } else { lo + (p + 1) as f64 * step };
            push_panel(&mut rule, lo + p as f64 * step, right);
        }
    }
    rule
}
