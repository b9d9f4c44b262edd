//! Two-qudit states: pure amplitudes over `|i⟩₁|j⟩₂`, density matrices, and
//! the state-level figures of merit (Schmidt number, fidelity, purity).
//!
//! Basis index of `|i⟩₁|j⟩₂` is `i·d + j` with zero-based cores. Everything
//! user facing (file formats, CLI) numbers cores from 1.

use std::path::Path;

use nalgebra::SVD;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector, ONE, ZERO};

pub const NORM_TOL: f64 = 1e-12;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-9;

/// Amplitudes of a two-qudit pure state, row-major over `(core₁, core₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    dim: usize,
    amplitudes: CVector,
}

impl PureState {
    /// Normalizes `amplitudes`; fails on a zero vector or a length that is
    /// not `dim²`.
    pub fn new(dim: usize, amplitudes: CVector) -> Result<Self> {
        if dim < 2 {
            return Err(invalid(format!("qudit dimension must be >= 2, got {dim}")));
        }
        if amplitudes.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(invalid("state vector has zero or non-finite norm"));
        }
        Ok(Self {
            dim,
            amplitudes: amplitudes.unscale(norm),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn amplitude(&self, i: usize, j: usize) -> Complex64 {
        self.amplitudes[i * self.dim + j]
    }

    /// Amplitudes as the `d×d` coefficient matrix `C[i][j]`.
    pub fn coefficient_matrix(&self) -> CMatrix {
        CMatrix::from_fn(self.dim, self.dim, |i, j| self.amplitude(i, j))
    }

    pub fn density(&self) -> DensityMatrix {
        density_from_pure(self)
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile::from_matrix(self.dim, &self.coefficient_matrix(), None)
    }

    pub fn from_file(file: &MatrixFile) -> Result<Self> {
        let c = file.to_matrix()?;
        if c.nrows() != file.dim || c.ncols() != file.dim {
            return Err(Error::Parse(format!(
                "pure state expects a {0}x{0} amplitude table",
                file.dim
            )));
        }
        let amps = CVector::from_fn(file.dim * file.dim, |k, _| c[(k / file.dim, k % file.dim)]);
        Self::new(file.dim, amps)
    }
}

/// A validated two-qudit density matrix (`d²×d²`, Hermitian, unit trace, PSD).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates all invariants. The stored matrix is the exact Hermitian
    /// part of the input.
    pub fn new(dim: usize, matrix: CMatrix) -> Result<Self> {
        let n = dim * dim;
        if dim < 2 {
            return Err(invalid(format!("qudit dimension must be >= 2, got {dim}")));
        }
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows().max(matrix.ncols()),
            });
        }
        if matrix
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::InvalidState("non-finite entries".into()));
        }
        let asym = linalg::max_abs(&(&matrix - matrix.adjoint()));
        if asym > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!(
                "not Hermitian (deviation {asym:.3e})"
            )));
        }
        let tr = linalg::trace(&matrix);
        if (tr - ONE).norm() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace is {tr}, expected 1")));
        }
        let matrix = linalg::hermitian_part(&matrix);
        let min = linalg::hermitian_eigenvalues(&matrix)[0];
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite (min eigenvalue {min:.3e})"
            )));
        }
        Ok(Self { dim, matrix })
    }

    /// Hermitizes and renormalizes the trace before validating. Used by
    /// transformations that are trace preserving only up to round-off.
    pub fn from_unnormalized(dim: usize, matrix: CMatrix) -> Result<Self> {
        let h = linalg::hermitian_part(&matrix);
        let tr = linalg::trace(&h).re;
        if !(tr > 0.0) {
            return Err(Error::InvalidState(format!("non-positive trace {tr}")));
        }
        Self::new(dim, h.unscale(tr))
    }

    pub fn maximally_mixed(dim: usize) -> Result<Self> {
        let n = dim * dim;
        Self::new(dim, CMatrix::identity(n, n).unscale(n as f64))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn element(&self, i1: usize, j1: usize, i2: usize, j2: usize) -> Complex64 {
        let d = self.dim;
        self.matrix[(i1 * d + j1, i2 * d + j2)]
    }

    /// Convex combination `w·self + (1−w)·other`.
    pub fn mix(&self, other: &DensityMatrix, w: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if !(0.0..=1.0).contains(&w) {
            return Err(invalid(format!("mixing weight {w} outside [0,1]")));
        }
        Self::new(self.dim, self.matrix.scale(w) + other.matrix.scale(1.0 - w))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::hermitian_eigenvalues(&self.matrix)
    }

    /// Conjugation by a local unitary `U₁ ⊗ U₂`.
    pub fn local_unitary(&self, u1: &CMatrix, u2: &CMatrix) -> Result<Self> {
        let u = linalg::kron(u1, u2);
        Self::from_unnormalized(self.dim, &u * &self.matrix * u.adjoint())
    }

    pub fn to_file(&self) -> MatrixFile {
        MatrixFile::from_matrix(self.dim, &self.matrix, Some(Tolerance::default()))
    }

    pub fn from_file(file: &MatrixFile) -> Result<Self> {
        Self::new(file.dim, file.to_matrix()?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        self.to_file().save(path)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_file(&MatrixFile::load(path)?)
    }
}

/// Validation tolerances recorded alongside exported matrices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub hermitian: f64,
    pub trace: f64,
    pub psd: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            hermitian: HERMITIAN_TOL,
            trace: TRACE_TOL,
            psd: PSD_TOL,
        }
    }
}

/// On-disk form of states and matrices: `{"dim": d, "re": [[..]], "im": [[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub dim: usize,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<Tolerance>,
}

impl MatrixFile {
    pub fn from_matrix(dim: usize, m: &CMatrix, tolerance: Option<Tolerance>) -> Self {
        let rows = |f: fn(&Complex64) -> f64| {
            (0..m.nrows())
                .map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect())
                .collect()
        };
        Self {
            dim,
            re: rows(|z| z.re),
            im: rows(|z| z.im),
            tolerance,
        }
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        let nrows = self.re.len();
        let ncols = self.re.first().map_or(0, Vec::len);
        if nrows == 0
            || self.im.len() != nrows
            || self
                .re
                .iter()
                .chain(self.im.iter())
                .any(|row| row.len() != ncols)
        {
            return Err(Error::Parse("re/im tables are empty or ragged".into()));
        }
        Ok(CMatrix::from_fn(nrows, ncols, |r, c| {
            Complex64::new(self.re[r][c], self.im[r][c])
        }))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Schmidt spectrum of a pure two-qudit state.
#[derive(Debug, Clone)]
pub struct SchmidtDecomposition {
    /// Non-negative, sorted descending.
    pub coefficients: Vec<f64>,
    pub left: Vec<CVector>,
    pub right: Vec<CVector>,
}

impl SchmidtDecomposition {
    /// `(Σλ)²/Σλ²` over squared coefficients `λ`.
    pub fn schmidt_number(&self) -> f64 {
        let (s, s2) = self
            .coefficients
            .iter()
            .map(|c| c * c)
            .fold((0.0, 0.0), |(s, s2), l| (s + l, s2 + l * l));
        s * s / s2
    }
}

pub fn schmidt_decomposition(psi: &PureState) -> SchmidtDecomposition {
    let d = psi.dim();
    let svd = SVD::new(psi.coefficient_matrix(), true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V†");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    SchmidtDecomposition {
        coefficients: order.iter().map(|&k| svd.singular_values[k]).collect(),
        left: order.iter().map(|&k| u.column(k).into_owned()).collect(),
        right: order
            .iter()
            .map(|&k| v_t.row(k).transpose().into_owned())
            .collect(),
    }
}

/// `Σ_i c_i |i⟩₁|i⟩₂`, normalized.
pub fn make_correlated_state(coeffs: &[Complex64]) -> Result<PureState> {
    let d = coeffs.len();
    if d < 2 {
        return Err(invalid(format!("need at least 2 coefficients, got {d}")));
    }
    if coeffs.iter().all(|c| c.norm() == 0.0) {
        return Err(invalid("coefficient vector is zero"));
    }
    let mut amps = CVector::from_element(d * d, ZERO);
    for (i, &c) in coeffs.iter().enumerate() {
        amps[i * d + i] = c;
    }
    PureState::new(d, amps)
}

pub fn make_correlated_state_real(coeffs: &[f64]) -> Result<PureState> {
    let c: Vec<Complex64> = coeffs.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    make_correlated_state(&c)
}

pub fn maximally_entangled(d: usize) -> Result<PureState> {
    if d < 2 {
        return Err(invalid(format!("qudit dimension must be >= 2, got {d}")));
    }
    make_correlated_state(&vec![ONE; d])
}

pub fn density_from_pure(psi: &PureState) -> DensityMatrix {
    DensityMatrix {
        dim: psi.dim,
        matrix: CMatrix::from_fn(psi.amplitudes.len(), psi.amplitudes.len(), |a, b| {
            psi.amplitudes[a] * psi.amplitudes[b].conj()
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsystem {
    First,
    Second,
}

impl Subsystem {
    /// Parses the user-facing tag `1` or `2`.
    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            _ => Err(invalid(format!("subsystem tag must be 1 or 2, got {tag}"))),
        }
    }
}

/// Reduced state of the photon named by `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: Subsystem) -> CMatrix {
    let d = rho.dim;
    CMatrix::from_fn(d, d, |a, b| {
        (0..d)
            .map(|k| match keep {
                Subsystem::First => rho.matrix[(a * d + k, b * d + k)],
                Subsystem::Second => rho.matrix[(k * d + a, k * d + b)],
            })
            .sum()
    })
}

/// Inverse purity of the photon-1 reduced state, `1/Tr(ρ₁²)`.
///
/// For pure inputs this is the Schmidt number `(Σλ)²/Σλ²`.
pub fn schmidt_number(rho: &DensityMatrix) -> f64 {
    let r = partial_trace(rho, Subsystem::First);
    1.0 / (&r * &r).trace().re
}

/// `√⟨φ|ρ|φ⟩`, the Uhlmann fidelity against a pure target.
pub fn fidelity_to_pure(rho: &DensityMatrix, phi: &PureState) -> Result<f64> {
    if rho.dim != phi.dim {
        return Err(Error::DimensionMismatch {
            expected: rho.dim,
            found: phi.dim,
        });
    }
    Ok(linalg::expectation(&rho.matrix, &phi.amplitudes)
        .max(0.0)
        .sqrt())
}

pub fn purity(rho: &DensityMatrix) -> f64 {
    // Tr ρ² = Σ|ρ_ab|² for Hermitian ρ.
    rho.matrix.iter().map(|z| z.norm_sqr()).sum()
}

/// Photon-1 phases `θ_k` that make `⟨0,0|ρ|k,k⟩` real and non-negative.
/// Degenerate elements (modulus below 1e-12) get `θ_k = 0`.
pub fn rephase_angles(rho: &DensityMatrix) -> Vec<f64> {
    (0..rho.dim)
        .map(|k| {
            let z = rho.element(0, 0, k, k);
            if k == 0 || z.norm() < 1e-12 {
                0.0
            } else {
                z.arg()
            }
        })
        .collect()
}

/// Applies `U = M ⊗ I` with `M = diag(e^{iθ_k})` so the correlated
/// coherences `⟨0,0|ρ|k,k⟩` become real and non-negative.
pub fn rephase(rho: &DensityMatrix) -> DensityMatrix {
    let d = rho.dim;
    let theta = rephase_angles(rho);
    // (UρU†)_{(a,b),(a',b')} = e^{i(θ_a − θ_a')} ρ_{(a,b),(a',b')}
    let matrix = CMatrix::from_fn(d * d, d * d, |r, c| {
        rho.matrix[(r, c)] * linalg::cis(theta[r / d] - theta[c / d])
    });
    DensityMatrix {
        dim: d,
        matrix: linalg::hermitian_part(&matrix),
    }
}
