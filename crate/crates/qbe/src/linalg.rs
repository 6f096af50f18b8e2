//! Small dense linear-algebra helpers shared across the crate.
//!
//! Everything here operates on `nalgebra` dynamic matrices with complex
//! entries. System dimensions are tiny (2^q with q <= 6), so dense
//! eigendecompositions are both exact enough and fast enough.

use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;

pub const IM: C64 = Complex::new(0.0, 1.0);
pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const ZERO: C64 = Complex::new(0.0, 0.0);

/// Hermitian inner product `<a|b>` (conjugate-linear in the first slot).
#[inline]
pub fn inner(a: &CVector, b: &CVector) -> C64 {
    a.dotc(b)
}

/// Kronecker product of two complex matrices.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMatrix::zeros(ra * rb, ca * cb);
    for i in 0..ra {
        for j in 0..ca {
            let s = a[(i, j)];
            for k in 0..rb {
                for l in 0..cb {
                    out[(i * rb + k, j * cb + l)] = s * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub struct HermitianEigen {
    pub values: DVector<f64>,
    /// Unitary matrix whose columns are the eigenvectors, ordered as `values`.
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(m: &CMatrix) -> HermitianEigen {
    let se = m.clone().symmetric_eigen();
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&k| se.eigenvalues[k]));
    let mut vectors = CMatrix::zeros(n, n);
    for (col, &k) in order.iter().enumerate() {
        vectors.set_column(col, &se.eigenvectors.column(k));
    }
    HermitianEigen { values, vectors }
}

/// The unitary `exp(-i t H)` for Hermitian `H`, computed by diagonalization.
pub fn evolution_operator(h: &CMatrix, t: f64) -> CMatrix {
    let eig = hermitian_eigen(h);
    let n = h.nrows();
    let mut out = CMatrix::zeros(n, n);
    for k in 0..n {
        let phase = (-IM * eig.values[k] * t).exp();
        let v = eig.vectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += phase * v[i] * v[j].conj();
            }
        }
    }
    out
}

/// Apply `exp(-i t H)` to a vector.
pub fn evolve_exact(h: &CMatrix, t: f64, v: &CVector) -> CVector {
    evolution_operator(h, t) * v
}

/// Directional derivative of the propagator:
/// `d/ds exp(-i dt (H + s A)) |_{s=0}` for Hermitian `H`, `A`.
///
/// Uses the divided-difference (Daleckii-Krein) formula in the eigenbasis
/// of `H`, which is exact for degenerate spectra as well.
pub fn propagator_derivative(h: &CMatrix, dt: f64, dir: &CMatrix) -> CMatrix {
    let eig = hermitian_eigen(h);
    let n = h.nrows();
    let atil = eig.vectors.adjoint() * dir * &eig.vectors;
    let mut g = CMatrix::zeros(n, n);
    for k in 0..n {
        for l in 0..n {
            let lk = eig.values[k];
            let ll = eig.values[l];
            let f = if (lk - ll).abs() < 1e-12 {
                -IM * dt * (-IM * lk * dt).exp()
            } else {
                ((-IM * lk * dt).exp() - (-IM * ll * dt).exp()) / C64::new(lk - ll, 0.0)
            };
            g[(k, l)] = f * atil[(k, l)];
        }
    }
    &eig.vectors * g * eig.vectors.adjoint()
}

/// Pearson correlation coefficient of two equally long samples.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}
