//! Entanglement and non-locality witnesses: two-dimensional subspace
//! concurrence and the CGLMP Bell parameter `I_d`.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::qstate::{
    fidelity_to_pure, make_correlated_state_real, purity, rephase, schmidt_number, DensityMatrix,
    PureState,
};

/// Bound obeyed by local hidden-variable models.
pub const CGLMP_LOCAL_BOUND: f64 = 2.0;
/// `I₄` of the maximally entangled ququart pair.
pub const CGLMP4_MAXIMALLY_ENTANGLED: f64 = 2.8962;
/// Largest known `I₄`, reached by a non-maximally entangled state.
pub const CGLMP4_MAXIMUM: f64 = 2.9727;

/// Wootters concurrence of `ρ` restricted to `span{|ii⟩, |ij⟩, |ji⟩, |jj⟩}`,
/// renormalized by the weight of that block.
pub fn subspace_concurrence(rho: &DensityMatrix, i: usize, j: usize) -> Result<f64> {
    let d = rho.dim();
    if i == j {
        return Err(invalid("subspace concurrence needs two distinct cores"));
    }
    if i >= d || j >= d {
        return Err(invalid(format!("core out of range for d = {d}")));
    }
    let idx = [i * d + i, i * d + j, j * d + i, j * d + j];
    let block = CMatrix::from_fn(4, 4, |r, c| rho.matrix()[(idx[r], idx[c])]);
    let weight = linalg::trace(&block).re;
    if weight < 1e-10 {
        return Ok(0.0);
    }
    Ok(two_qubit_concurrence(&block.unscale(weight)))
}

/// `max(0, λ₁−λ₂−λ₃−λ₄)` with `λ` the square roots of the eigenvalues of
/// `√ρ ρ̃ √ρ`, `ρ̃ = (σy⊗σy) ρ* (σy⊗σy)`.
pub fn two_qubit_concurrence(rho: &CMatrix) -> f64 {
    // σy⊗σy is real: antidiagonal (−1, 1, 1, −1).
    let yy = CMatrix::from_fn(4, 4, |r, c| {
        if r + c == 3 {
            Complex64::new(if r == 0 || r == 3 { -1.0 } else { 1.0 }, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let flipped = &yy * rho.conjugate() * &yy;
    let s = linalg::psd_sqrt(rho);
    let mut lambda: Vec<f64> = linalg::hermitian_eigenvalues(&(&s * flipped * &s))
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    lambda.sort_by(|a, b| b.total_cmp(a));
    (lambda[0] - lambda[1] - lambda[2] - lambda[3]).clamp(0.0, 1.0)
}

/// All core pairs `i < j` in lexicographic order.
pub fn core_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|i| (i + 1..d).map(move |j| (i, j)))
        .collect()
}

/// CGLMP measurement bases and the assembled Bell operator.
#[derive(Debug, Clone)]
pub struct CglmpContext {
    pub dim: usize,
    pub bell_operator: CMatrix,
    /// Columns are the outcome vectors of `A₁, A₂, B₁, B₂`.
    pub bases: [CMatrix; 4],
}

/// Outcome `k` of party A setting `a`: `(1/√d) Σ_j e^{i2πj(k+α_a)/d}|j⟩`,
/// `α = (0, ½)`.
pub fn alice_vector(d: usize, setting: usize, k: usize) -> CVector {
    let alpha = [0.0, 0.5][setting];
    let norm = 1.0 / (d as f64).sqrt();
    CVector::from_fn(d, |j, _| {
        linalg::cis(TAU * j as f64 * (k as f64 + alpha) / d as f64) * norm
    })
}

/// Outcome `l` of party B setting `b`: `(1/√d) Σ_j e^{i2πj(−l+β_b)/d}|j⟩`,
/// `β = (¼, −¼)`.
pub fn bob_vector(d: usize, setting: usize, l: usize) -> CVector {
    let beta = [0.25, -0.25][setting];
    let norm = 1.0 / (d as f64).sqrt();
    CVector::from_fn(d, |j, _| {
        linalg::cis(TAU * j as f64 * (-(l as f64) + beta) / d as f64) * norm
    })
}

fn basis_matrix(d: usize, f: impl Fn(usize) -> CVector) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    for k in 0..d {
        m.set_column(k, &f(k));
    }
    m
}

/// Builds `Ŝ` with `Tr(Ŝρ) = I_d(ρ)`:
///
/// `I_d = Σ_{k<⌊d/2⌋} (1 − 2k/(d−1)) · ([A₁=B₁+k] + [B₁=A₂+k+1] + [A₂=B₂+k] + [B₂=A₁+k]
///        − [A₁=B₁−k−1] − [B₁=A₂−k] − [A₂=B₂−k−1] − [B₂=A₁−k−1])`
///
/// where `[X=Y+m]` is the probability that the outcomes satisfy
/// `X = Y + m (mod d)`.
pub fn cglmp_context(d: usize) -> Result<CglmpContext> {
    if d < 2 {
        return Err(invalid(format!("CGLMP needs d >= 2, got {d}")));
    }
    let bases = [
        basis_matrix(d, |k| alice_vector(d, 0, k)),
        basis_matrix(d, |k| alice_vector(d, 1, k)),
        basis_matrix(d, |k| bob_vector(d, 0, k)),
        basis_matrix(d, |k| bob_vector(d, 1, k)),
    ];
    let proj = |basis: &CMatrix, k: usize| {
        let v = basis.column(k).into_owned();
        linalg::outer(&v)
    };
    let alice: Vec<Vec<CMatrix>> = (0..2)
        .map(|a| (0..d).map(|k| proj(&bases[a], k)).collect())
        .collect();
    let bob: Vec<Vec<CMatrix>> = (0..2)
        .map(|b| (0..d).map(|l| proj(&bases[2 + b], l)).collect())
        .collect();
    let m = |x: i64| x.rem_euclid(d as i64) as usize;

    // [A_a = B_b + shift]
    let a_eq_b = |a: usize, b: usize, shift: i64| {
        (0..d).fold(CMatrix::zeros(d * d, d * d), |acc, l| {
            acc + alice[a][m(l as i64 + shift)].kronecker(&bob[b][l])
        })
    };
    // [B_b = A_a + shift]
    let b_eq_a = |b: usize, a: usize, shift: i64| {
        (0..d).fold(CMatrix::zeros(d * d, d * d), |acc, j| {
            acc + alice[a][j].kronecker(&bob[b][m(j as i64 + shift)])
        })
    };

    let mut op = CMatrix::zeros(d * d, d * d);
    for k in 0..(d / 2) as i64 {
        let weight = 1.0 - 2.0 * k as f64 / (d as f64 - 1.0);
        let plus = a_eq_b(0, 0, k) + b_eq_a(0, 1, k + 1) + a_eq_b(1, 1, k) + b_eq_a(1, 0, k);
        let minus =
            a_eq_b(0, 0, -k - 1) + b_eq_a(0, 1, -k) + a_eq_b(1, 1, -k - 1) + b_eq_a(1, 0, -k - 1);
        op += (plus - minus).scale(weight);
    }
    Ok(CglmpContext {
        dim: d,
        bell_operator: linalg::hermitian_part(&op),
        bases,
    })
}

/// `Tr(Ŝρ)`.
pub fn cglmp_value(rho: &DensityMatrix, ctx: &CglmpContext) -> Result<f64> {
    if rho.dim() != ctx.dim {
        return Err(Error::DimensionMismatch {
            expected: ctx.dim,
            found: rho.dim(),
        });
    }
    let v = ctx
        .bell_operator
        .component_mul(&rho.matrix().transpose())
        .sum();
    debug_assert!(
        v.im.abs() < 1e-10,
        "Bell expectation has imaginary part {}",
        v.im
    );
    Ok(v.re)
}

/// `(value − 2)/std`: violation of the local bound in standard deviations.
pub fn violation_sigma(value: f64, std: f64) -> Result<f64> {
    if !(std > 0.0) {
        return Err(invalid(format!(
            "standard deviation must be positive, got {std}"
        )));
    }
    Ok((value - CGLMP_LOCAL_BOUND) / std)
}

#[derive(Debug, Clone)]
pub struct CglmpOptimum {
    /// Real non-negative, unit-norm correlated amplitudes.
    pub coefficients: Vec<f64>,
    pub value: f64,
    pub grid_value: f64,
    pub grid_resolution: f64,
    pub sweeps: usize,
    pub converged: bool,
}

const GRID_BUDGET: usize = 250_000;
const STARTS: usize = 8;

fn simplex_points(d: usize, steps: usize) -> usize {
    // C(steps + d − 1, d − 1)
    (1..d).fold(1usize, |acc, k| acc.saturating_mul(steps + k) / k)
}

fn for_each_composition(d: usize, steps: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(parts: &mut Vec<usize>, left: usize, d: usize, f: &mut impl FnMut(&[usize])) {
        if parts.len() == d - 1 {
            parts.push(left);
            f(parts);
            parts.pop();
            return;
        }
        for x in 0..=left {
            parts.push(x);
            rec(parts, left - x, d, f);
            parts.pop();
        }
    }
    rec(&mut Vec::with_capacity(d), steps, d, f);
}

fn rayleigh(m: &DMatrix<f64>, c: &[f64]) -> f64 {
    let mut num = 0.0;
    for i in 0..c.len() {
        for j in 0..c.len() {
            num += c[i] * m[(i, j)] * c[j];
        }
    }
    num / c.iter().map(|x| x * x).sum::<f64>()
}

/// Exact maximization of the Rayleigh quotient along coordinate `i` over
/// `c_i ≥ 0`.
fn best_coordinate(m: &DMatrix<f64>, c: &[f64], i: usize) -> f64 {
    let d = c.len();
    let mii = m[(i, i)];
    let b: f64 = (0..d).filter(|&j| j != i).map(|j| m[(i, j)] * c[j]).sum();
    let s: f64 = (0..d).filter(|&j| j != i).map(|j| c[j] * c[j]).sum();
    let mut e = 0.0;
    for j in (0..d).filter(|&j| j != i) {
        for k in (0..d).filter(|&k| k != i) {
            e += c[j] * m[(j, k)] * c[k];
        }
    }
    let value = |x: f64| (mii * x * x + 2.0 * b * x + e) / (x * x + s);
    // Stationary points solve b·x² − (M_ii·s − e)·x − b·s = 0.
    let mut candidates = vec![0.0, c[i]];
    let q = mii * s - e;
    if b.abs() > 1e-300 {
        let disc = (q * q + 4.0 * b * b * s).sqrt();
        candidates.push((q + disc) / (2.0 * b));
        candidates.push((q - disc) / (2.0 * b));
    }
    candidates
        .into_iter()
        .filter(|x| x.is_finite() && *x >= 0.0 && (*x > 0.0 || s > 0.0))
        .fold((c[i], value(c[i])), |best, x| {
            let v = value(x);
            if v > best.1 {
                (x, v)
            } else {
                best
            }
        })
        .0
}

/// Maximizes `I_d` over correlated states `Σ c_i|ii⟩` with real `c_i ≥ 0`.
///
/// Squared amplitudes are scanned on a simplex grid (step 0.01 for `d ≤ 4`,
/// coarser above so the grid stays under 250k points), then the best starts
/// are refined by exact coordinate ascent.
pub fn optimize_cglmp_state(d: usize) -> Result<CglmpOptimum> {
    let ctx = cglmp_context(d)?;
    // For real c, ⟨ψ|Ŝ|ψ⟩ = cᵀ Re(S_corr) c.
    let m = DMatrix::from_fn(d, d, |i, j| ctx.bell_operator[(i * d + i, j * d + j)].re);

    let mut steps = 100;
    while simplex_points(d, steps) > GRID_BUDGET {
        steps -= 1;
    }
    let mut top: Vec<(f64, Vec<f64>)> = Vec::with_capacity(STARTS + 1);
    for_each_composition(d, steps, &mut |parts| {
        let c: Vec<f64> = parts
            .iter()
            .map(|&p| (p as f64 / steps as f64).sqrt())
            .collect();
        let v = rayleigh(&m, &c);
        if top.len() < STARTS || v > top[top.len() - 1].0 {
            let pos = top.partition_point(|(tv, _)| *tv >= v);
            top.insert(pos, (v, c));
            top.truncate(STARTS);
        }
    });
    let grid_value = top[0].0;

    let mut best: Option<(f64, Vec<f64>, usize, bool)> = None;
    for (_, start) in top {
        let mut c = start;
        let mut converged = false;
        let mut sweeps = 0;
        while sweeps < 100_000 {
            sweeps += 1;
            let mut moved = 0.0f64;
            for i in 0..d {
                let x = best_coordinate(&m, &c, i);
                moved = moved.max((x - c[i]).abs());
                c[i] = x;
                let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                c.iter_mut().for_each(|v| *v /= n);
            }
            if moved < 1e-13 {
                converged = true;
                break;
            }
        }
        let v = rayleigh(&m, &c);
        if best.as_ref().is_none_or(|b| v > b.0) {
            best = Some((v, c, sweeps, converged));
        }
    }
    let (_, coefficients, sweeps, converged) = best.expect("grid is never empty");
    let value = cglmp_value(&make_correlated_state_real(&coefficients)?.density(), &ctx)?;
    Ok(CglmpOptimum {
        coefficients,
        value,
        grid_value,
        grid_resolution: 1.0 / steps as f64,
        sweeps,
        converged,
    })
}

/// Figures of merit evaluated on one reconstructed state.
#[derive(Debug, Clone)]
pub struct MetricSet {
    pub target: PureState,
    pub cglmp: CglmpContext,
}

impl MetricSet {
    pub fn new(target: PureState) -> Result<Self> {
        let cglmp = cglmp_context(target.dim())?;
        Ok(Self { target, cglmp })
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `fidelity, purity, schmidt_number, C_ij (i<j, one-based), I<d>`.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec![
            "fidelity".to_string(),
            "purity".into(),
            "schmidt_number".into(),
        ];
        names.extend(
            core_pairs(self.dim())
                .into_iter()
                .map(|(i, j)| format!("C{}{}", i + 1, j + 1)),
        );
        names.push(format!("I{}", self.dim()));
        names
    }

    /// Rephases `ρ` first; the local-unitary invariant entries are unaffected.
    pub fn evaluate(&self, rho: &DensityMatrix) -> Result<Vec<f64>> {
        let r = rephase(rho);
        let mut out = vec![
            fidelity_to_pure(&r, &self.target)?,
            purity(&r),
            schmidt_number(&r),
        ];
        for (i, j) in core_pairs(self.dim()) {
            out.push(subspace_concurrence(&r, i, j)?);
        }
        out.push(cglmp_value(&r, &self.cglmp)?);
        Ok(out)
    }
}
