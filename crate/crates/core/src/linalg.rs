//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted ascending.
///
/// The input is symmetrized first so that round-off in the anti-Hermitian
/// part cannot leak into the eigenvalues.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = hermitian_part(m);
    let eig = SymmetricEigen::new(h);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_eigen(m).0
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Rebuilds `V f(Λ) V†` from an eigen-decomposition.
pub fn from_spectrum(values: &[f64], vectors: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let n = values.len();
    let mut scaled = vectors.clone();
    for (c, &v) in values.iter().enumerate() {
        let fv = f(v);
        for r in 0..n {
            scaled[(r, c)] *= fv;
        }
    }
    &scaled * vectors.adjoint()
}

/// Principal square root of a positive-semidefinite matrix; negative
/// eigenvalues from round-off are clipped to zero.
pub fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    from_spectrum(&values, &vectors, |v| v.max(0.0).sqrt())
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i * b.len() + j] = x * y;
        }
    }
    out
}

pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `⟨v|m|v⟩`, real part only.
pub fn expectation(m: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(m * v)).re
}

pub fn trace(m: &CMatrix) -> Complex64 {
    m.diagonal().iter().sum()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Trace distance ½‖a − b‖₁ for Hermitian arguments.
pub fn trace_distance(a: &CMatrix, b: &CMatrix) -> f64 {
    0.5 * hermitian_eigenvalues(&(a - b))
        .iter()
        .map(|v| v.abs())
        .sum::<f64>()
}

pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
            ],
        );
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let back = from_spectrum(&vals, &vecs, |v| v);
        assert!(max_abs(&(back - &m)) < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.7, 0.0),
                Complex64::new(0.1, 0.2),
                Complex64::new(0.1, -0.2),
                Complex64::new(0.3, 0.0),
            ],
        );
        let s = psd_sqrt(&m);
        assert!(max_abs(&(&s * &s - &m)) < 1e-12);
    }
}
