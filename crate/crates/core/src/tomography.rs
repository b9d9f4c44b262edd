//! Two-photon state tomography: the standard superposition protocol, linear
//! inversion, Poisson maximum likelihood and bootstrap error bars.

use std::collections::HashMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::MetricSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix};
use crate::measurement::{
    poisson_sample, stream_rng, CountsRecord, EfficiencyModel, MeasurementSetting, SparseProjector,
};
use crate::qstate::{DensityMatrix, MatrixFile};

/// Per-photon settings and the joint setting pairs measured on them.
#[derive(Debug, Clone, PartialEq)]
pub struct TomographyProtocol {
    dim: usize,
    settings: Vec<MeasurementSetting>,
    pairs: Vec<(MeasurementSetting, MeasurementSetting)>,
}

/// `d` one-core settings `|i⟩`, then for each `i < j` the two superpositions
/// `(|i⟩+|j⟩)/√2` and `(|i⟩+i|j⟩)/√2`. Joint pairs are all `(s₁, s₂)`
/// combinations, photon-1 setting major.
pub fn standard_settings(d: usize) -> Result<TomographyProtocol> {
    if d < 2 {
        return Err(invalid(format!("tomography needs d >= 2, got {d}")));
    }
    let mut settings = (0..d)
        .map(|i| MeasurementSetting::one_core(d, i))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..d {
        for j in i + 1..d {
            settings.push(MeasurementSetting::two_core(d, i, j, 0.0)?);
            settings.push(MeasurementSetting::two_core(d, i, j, FRAC_PI_2)?);
        }
    }
    TomographyProtocol::from_settings(d, settings)
}

impl TomographyProtocol {
    pub fn from_settings(dim: usize, settings: Vec<MeasurementSetting>) -> Result<Self> {
        if let Some(s) = settings.iter().find(|s| s.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.dim(),
            });
        }
        let pairs = settings
            .iter()
            .flat_map(|a| settings.iter().map(move |b| (a.clone(), b.clone())))
            .collect();
        Ok(Self {
            dim,
            settings,
            pairs,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn settings(&self) -> &[MeasurementSetting] {
        &self.settings
    }

    pub fn pairs(&self) -> &[(MeasurementSetting, MeasurementSetting)] {
        &self.pairs
    }

    /// Same protocol with core `k` renamed `map[k]` on both photons.
    pub fn relabeled(&self, map: &[usize]) -> Self {
        let settings = self.settings.iter().map(|s| s.relabeled(map)).collect();
        Self::from_settings(self.dim, settings).expect("relabeling keeps the dimension")
    }

    /// Numerical rank of the map `ρ ↦ (Tr Π_k ρ)_k` on Hermitian matrices.
    pub fn measurement_rank(&self) -> usize {
        let projectors: Vec<SparseProjector> = self
            .pairs
            .iter()
            .map(|(a, b)| SparseProjector::new(a, b))
            .collect();
        let a = design_matrix(self.dim, &projectors);
        gram_rank(&(a.transpose() * a))
    }
}

/// Rank from the Gram matrix `AᵀA`; a singular value counts when it exceeds
/// 1e-6 of the largest.
fn gram_rank(gram: &DMatrix<f64>) -> usize {
    let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
    let max = eig.max();
    eig.iter().filter(|&&v| v > 1e-12 * max).count()
}

/// Coordinates of a Hermitian `X` in the real basis `E_aa`,
/// `E_ab + E_ba`, `i(E_ab − E_ba)` (`a < b`).
fn hermitian_index(n: usize) -> DMatrix<usize> {
    let mut idx = DMatrix::zeros(n, n);
    let mut m = n;
    for a in 0..n {
        idx[(a, a)] = a;
        for b in a + 1..n {
            idx[(a, b)] = m;
            m += 2;
        }
    }
    idx
}

/// Row `k` holds `Tr(Π_k H_m)` for every basis element `H_m`.
fn design_matrix(d: usize, projectors: &[SparseProjector]) -> DMatrix<f64> {
    let n = d * d;
    let idx = hermitian_index(n);
    let mut a = DMatrix::zeros(projectors.len(), n * n);
    for (k, p) in projectors.iter().enumerate() {
        for (x, (&r, &vr)) in p.idx.iter().zip(&p.amp).enumerate() {
            a[(k, idx[(r, r)])] += vr.norm_sqr();
            for (&c, &vc) in p.idx.iter().zip(&p.amp).skip(x + 1) {
                let (lo, hi, z) = if r < c {
                    (r, c, vr.conj() * vc)
                } else {
                    (c, r, vc.conj() * vr)
                };
                let m = idx[(lo, hi)];
                a[(k, m)] += 2.0 * z.re;
                a[(k, m + 1)] -= 2.0 * z.im;
            }
        }
    }
    a
}

fn hermitian_from_coords(n: usize, x: &DVector<f64>) -> CMatrix {
    let idx = hermitian_index(n);
    CMatrix::from_fn(n, n, |r, c| {
        use std::cmp::Ordering::*;
        match r.cmp(&c) {
            Equal => num_complex::Complex64::new(x[idx[(r, r)]], 0.0),
            Less => num_complex::Complex64::new(x[idx[(r, c)]], x[idx[(r, c)] + 1]),
            Greater => num_complex::Complex64::new(x[idx[(c, r)]], -x[idx[(c, r)] + 1]),
        }
    })
}

#[derive(Debug)]
struct Design {
    dim: usize,
    projectors: Vec<SparseProjector>,
    efficiency: Vec<f64>,
    /// `Σ_k η_k Π_k`.
    efficiency_operator: CMatrix,
    /// Least-squares solver, present when the projectors span the operator space.
    pseudo_inverse: Option<DMatrix<f64>>,
    rank: usize,
}

impl Design {
    fn new(
        dim: usize,
        pairs: &[(MeasurementSetting, MeasurementSetting)],
        eff: &EfficiencyModel,
    ) -> Result<Self> {
        eff.validate(dim)?;
        let projectors: Vec<SparseProjector> = pairs
            .iter()
            .map(|(a, b)| SparseProjector::new(a, b))
            .collect();
        let efficiency = pairs
            .iter()
            .map(|(a, b)| {
                Ok(eff.detection_factor(a.n_cores())? * eff.detection_factor(b.n_cores())?)
            })
            .collect::<Result<Vec<f64>>>()?;
        let n = dim * dim;
        let mut efficiency_operator = CMatrix::zeros(n, n);
        for (p, &e) in projectors.iter().zip(&efficiency) {
            p.accumulate(&mut efficiency_operator, e);
        }
        // Normal equations: the design is well conditioned, and nalgebra's SVD
        // loses accuracy on its heavily degenerate spectrum.
        let a = design_matrix(dim, &projectors);
        let gram = a.transpose() * &a;
        let rank = gram_rank(&gram);
        let pseudo_inverse = if rank == n * n {
            let chol = Cholesky::new(gram)
                .ok_or_else(|| Error::Singular("measurement Gram matrix".into()))?;
            Some(chol.inverse() * a.transpose())
        } else {
            None
        };
        Ok(Self {
            dim,
            projectors,
            efficiency,
            efficiency_operator,
            pseudo_inverse,
            rank,
        })
    }
}

/// Counts aligned with a protocol, plus the forward model needed to fit them.
/// Counts are real so exact expectation values can be fed in.
#[derive(Debug, Clone)]
pub struct TomographyData {
    design: Arc<Design>,
    counts: Vec<f64>,
}

impl TomographyData {
    /// Looks up every protocol pair in `record`.
    pub fn from_record(
        record: &CountsRecord,
        protocol: &TomographyProtocol,
        eff: &EfficiencyModel,
    ) -> Result<Self> {
        if record.dim != protocol.dim {
            return Err(Error::DimensionMismatch {
                expected: protocol.dim,
                found: record.dim,
            });
        }
        let table: HashMap<(String, String), u64> = record
            .entries
            .iter()
            .map(|e| ((e.setting1.label(), e.setting2.label()), e.counts))
            .collect();
        let counts = protocol
            .pairs
            .iter()
            .map(|(a, b)| {
                table
                    .get(&(a.label(), b.label()))
                    .map(|&n| n as f64)
                    .ok_or_else(|| {
                        Error::MissingData(format!(
                            "no counts for setting pair {},{}",
                            a.label(),
                            b.label()
                        ))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(protocol, eff, counts)
    }

    pub fn new(
        protocol: &TomographyProtocol,
        eff: &EfficiencyModel,
        counts: Vec<f64>,
    ) -> Result<Self> {
        if counts.len() != protocol.pairs.len() {
            return Err(Error::DimensionMismatch {
                expected: protocol.pairs.len(),
                found: counts.len(),
            });
        }
        if counts.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return Err(invalid("counts must be finite and non-negative"));
        }
        let design = Design::new(protocol.dim, &protocol.pairs, eff)?;
        Ok(Self {
            design: Arc::new(design),
            counts,
        })
    }

    /// Noise-free data `η_k Tr(Π_k ρ)` (unit flux).
    pub fn exact(
        rho: &DensityMatrix,
        protocol: &TomographyProtocol,
        eff: &EfficiencyModel,
    ) -> Result<Self> {
        if rho.dim() != protocol.dim {
            return Err(Error::DimensionMismatch {
                expected: protocol.dim,
                found: rho.dim(),
            });
        }
        let mut data = Self::new(protocol, eff, vec![0.0; protocol.pairs.len()])?;
        data.counts = data
            .design
            .projectors
            .iter()
            .zip(&data.design.efficiency)
            .map(|(p, e)| e * p.expectation(rho.matrix()).max(0.0))
            .collect();
        Ok(data)
    }

    /// Same forward model with different counts.
    pub fn with_counts(&self, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != self.counts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.counts.len(),
                found: counts.len(),
            });
        }
        Ok(Self {
            design: Arc::clone(&self.design),
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.design.dim
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Least-squares solution of `n_k/η_k ∝ Tr(Π_k X)` over Hermitian `X`,
/// normalized to unit trace. Not necessarily positive semidefinite.
pub fn linear_inversion(
    record: &CountsRecord,
    protocol: &TomographyProtocol,
    eff: &EfficiencyModel,
) -> Result<CMatrix> {
    linear_inversion_data(&TomographyData::from_record(record, protocol, eff)?)
}

pub fn linear_inversion_data(data: &TomographyData) -> Result<CMatrix> {
    let design = &data.design;
    let n = design.dim * design.dim;
    let pinv = design.pseudo_inverse.as_ref().ok_or_else(|| {
        Error::Singular(format!(
            "measurement matrix has rank {} < {}",
            design.rank,
            n * n
        ))
    })?;
    let q = DVector::from_iterator(
        data.counts.len(),
        data.counts
            .iter()
            .zip(&design.efficiency)
            .map(|(n, e)| n / e),
    );
    let x = hermitian_from_coords(n, &(pinv * q));
    let tr = linalg::trace(&x).re;
    if !(tr.abs() > 0.0) || !tr.is_finite() {
        return Err(Error::Singular("linear inversion gives zero trace".into()));
    }
    Ok(linalg::hermitian_part(&x.unscale(tr)))
}

/// Eigenvalue clipping to the nearest PSD unit-trace matrix. Also returns the
/// discarded negative eigenvalue mass.
pub fn clip_to_psd(m: &CMatrix) -> (CMatrix, f64) {
    let (values, vectors) = linalg::hermitian_eigen(m);
    let negative: f64 = values.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let clipped = linalg::from_spectrum(&values, &vectors, |v| v.max(0.0));
    let tr = linalg::trace(&clipped).re;
    (linalg::hermitian_part(&clipped.unscale(tr)), negative)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iterations: usize,
    /// Stop once the relative log-likelihood gain stays below this for two
    /// consecutive iterations.
    pub tolerance: f64,
    /// Stop once `|∇L|·|T| / N` falls below this.
    pub gradient_tolerance: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-10,
            gradient_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub rho: DensityMatrix,
    /// `Σ n_k ln μ_k − μ_k` at the fitted flux.
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// RMS of modeled minus observed counts.
    pub residual: f64,
    /// Fitted flux `s` in `μ_k = s·η_k·Tr(Π_k ρ)`.
    pub flux: f64,
    /// Log-likelihood after every accepted iteration, starting point first.
    pub history: Vec<f64>,
}

/// On-disk form: the matrix file plus fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconstructionFile {
    #[serde(flatten)]
    pub matrix: MatrixFile,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub flux: f64,
}

impl ReconstructionResult {
    pub fn to_file(&self) -> ReconstructionFile {
        ReconstructionFile {
            matrix: self.rho.to_file(),
            log_likelihood: self.log_likelihood,
            iterations: self.iterations,
            converged: self.converged,
            residual: self.residual,
            flux: self.flux,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_file())? + "\n")?;
        Ok(())
    }
}

/// Upper-triangular `T` with `A = T†T`, packed as real parameters: the
/// diagonal, then `(re, im)` of each `T_ij`, `i < j`.
fn pack(t: &CMatrix) -> DVector<f64> {
    let n = t.nrows();
    let mut x = Vec::with_capacity(n * n);
    x.extend((0..n).map(|i| t[(i, i)].re));
    for i in 0..n {
        for j in i + 1..n {
            x.push(t[(i, j)].re);
            x.push(t[(i, j)].im);
        }
    }
    DVector::from_vec(x)
}

fn unpack(x: &DVector<f64>, n: usize) -> CMatrix {
    let mut t = CMatrix::zeros(n, n);
    for i in 0..n {
        t[(i, i)].re = x[i];
    }
    let mut m = n;
    for i in 0..n {
        for j in i + 1..n {
            t[(i, j)] = num_complex::Complex64::new(x[m], x[m + 1]);
            m += 2;
        }
    }
    t
}

struct Point {
    x: DVector<f64>,
    t: CMatrix,
    p: Vec<f64>,
    s: f64,
}

struct Likelihood<'a> {
    data: &'a TomographyData,
    n: usize,
    total: f64,
}

impl<'a> Likelihood<'a> {
    fn point(&self, x: DVector<f64>) -> Option<Point> {
        let t = unpack(&x, self.n);
        let a = t.adjoint() * &t;
        let p: Vec<f64> = self
            .data
            .design
            .projectors
            .iter()
            .map(|pr| pr.expectation(&a))
            .collect();
        if p.iter()
            .zip(&self.data.counts)
            .any(|(p, n)| *n > 0.0 && !(*p > 0.0))
        {
            return None;
        }
        let s = p
            .iter()
            .zip(&self.data.design.efficiency)
            .map(|(p, e)| p * e)
            .sum();
        Some(Point { x, t, p, s })
    }

    /// Profiled `Σ n_k ln p_k − N ln Σ η_k p_k` between two points, computed
    /// from the change in `A` so it stays accurate near the optimum.
    fn gain(&self, from: &Point, to: &Point) -> f64 {
        let dt = &to.t - &from.t;
        let da = dt.adjoint() * &from.t + from.t.adjoint() * &dt + dt.adjoint() * &dt;
        let mut gain = 0.0;
        let mut ds = 0.0;
        for ((pr, (&n, &e)), &p) in self
            .data
            .design
            .projectors
            .iter()
            .zip(self.data.counts.iter().zip(&self.data.design.efficiency))
            .zip(&from.p)
        {
            let dp = pr.expectation(&da);
            ds += e * dp;
            if n > 0.0 {
                gain += n * (dp / p).ln_1p();
            }
        }
        gain - self.total * (ds / from.s).ln_1p()
    }

    /// Gradient of the profiled likelihood in packed coordinates.
    fn gradient(&self, pt: &Point) -> DVector<f64> {
        let d = &self.data.design;
        let mut g = d.efficiency_operator.scale(-self.total / pt.s);
        for ((pr, &n), &p) in d.projectors.iter().zip(&self.data.counts).zip(&pt.p) {
            if n > 0.0 {
                pr.accumulate(&mut g, n / p);
            }
        }
        let tg = (&pt.t * g).scale(2.0);
        let n = self.n;
        let mut out = Vec::with_capacity(n * n);
        out.extend((0..n).map(|i| tg[(i, i)].re));
        for i in 0..n {
            for j in i + 1..n {
                out.push(tg[(i, j)].re);
                out.push(tg[(i, j)].im);
            }
        }
        DVector::from_vec(out)
    }

    /// Poisson log-likelihood at the optimal flux, and that flux.
    fn poisson(&self, pt: &Point) -> (f64, f64) {
        let flux = self.total / pt.s;
        let ll =
            pt.p.iter()
                .zip(self.data.counts.iter().zip(&self.data.design.efficiency))
                .filter(|(_, (n, _))| **n > 0.0)
                .map(|(p, (n, e))| n * (flux * e * p).ln())
                .sum::<f64>()
                - self.total;
        (ll, flux)
    }
}

const MEMORY: usize = 12;
const ARMIJO: f64 = 1e-4;
const START_MIX: f64 = 1e-3;
const MAX_NEGATIVE_MASS: f64 = 0.2;

/// Starting point: clipped linear inversion, or `I/d²` when linear inversion
/// is unavailable or too far from physical.
fn initial_state(data: &TomographyData) -> CMatrix {
    let n = data.dim() * data.dim();
    let mixed = CMatrix::identity(n, n).unscale(n as f64);
    match linear_inversion_data(data) {
        Ok(li) => {
            let (clipped, negative) = clip_to_psd(&li);
            if negative > MAX_NEGATIVE_MASS {
                mixed
            } else {
                clipped.scale(1.0 - START_MIX) + mixed.scale(START_MIX)
            }
        }
        Err(_) => mixed,
    }
}

/// Poisson maximum-likelihood fit over `ρ = T†T / Tr(T†T)` and the flux.
pub fn mle_reconstruct(
    record: &CountsRecord,
    protocol: &TomographyProtocol,
    eff: &EfficiencyModel,
    opts: &MleOptions,
) -> Result<ReconstructionResult> {
    mle_reconstruct_data(&TomographyData::from_record(record, protocol, eff)?, opts)
}

/// L-BFGS ascent with Armijo backtracking. Every accepted step increases the
/// likelihood, so `history` is non-decreasing.
pub fn mle_reconstruct_data(
    data: &TomographyData,
    opts: &MleOptions,
) -> Result<ReconstructionResult> {
    let total = data.total();
    if !(total > 0.0) {
        return Err(Error::MissingData("all counts are zero".into()));
    }
    let n = data.dim() * data.dim();
    let lik = Likelihood { data, n, total };

    let start = initial_state(data);
    let chol = Cholesky::new(linalg::hermitian_part(&start))
        .ok_or_else(|| Error::Singular("starting state is not positive definite".into()))?;
    let t0 = chol.l().adjoint();
    let mut cur = lik.point(pack(&t0)).ok_or_else(|| {
        Error::InvalidState("starting state assigns zero probability to observed counts".into())
    })?;
    let mut g = lik.gradient(&cur);
    let (mut ll, _) = lik.poisson(&cur);
    let mut history = vec![ll];
    let mut mem: Vec<(DVector<f64>, DVector<f64>, f64)> = Vec::with_capacity(MEMORY);
    let mut small_steps = 0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if g.norm() * cur.x.norm() <= opts.gradient_tolerance * total {
            converged = true;
            break;
        }
        // Ascent direction from the two-loop recursion on −L.
        let mut dir = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * s.dot(&dir);
            dir.axpy(-a, y, 1.0);
            alphas.push(a);
        }
        if let Some((s, y, _)) = mem.last() {
            dir *= s.dot(y) / y.dot(y);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&dir);
            dir.axpy(a - b, s, 1.0);
        }
        let mut slope = g.dot(&dir);
        if !(slope > 0.0) {
            mem.clear();
            dir = g.clone();
            slope = g.dot(&dir);
        }
        let mut step = if mem.is_empty() {
            (0.1 * cur.x.norm() / dir.norm()).min(1.0)
        } else {
            1.0
        };

        let mut accepted = None;
        for _ in 0..80 {
            if let Some(next) = lik.point(&cur.x + &dir * step) {
                let gain = lik.gain(&cur, &next);
                if gain >= ARMIJO * step * slope && gain > 0.0 {
                    accepted = Some((next, gain));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next, gain)) = accepted else {
            if mem.is_empty() {
                // Not even a gradient step improves: optimal to working precision.
                converged = true;
                break;
            }
            mem.clear();
            continue;
        };
        iterations += 1;

        let g_next = lik.gradient(&next);
        // Curvature pair for minimizing −L.
        let s = &next.x - &cur.x;
        let y = &g - &g_next;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            if mem.len() == MEMORY {
                mem.remove(0);
            }
            mem.push((s, y, 1.0 / sy));
        }
        ll += gain;
        history.push(ll);
        let rel = gain / ll.abs().max(1.0);
        cur = next;
        g = g_next;
        if rel < opts.tolerance {
            small_steps += 1;
            if small_steps >= 2 {
                converged = true;
                break;
            }
        } else {
            small_steps = 0;
        }
    }

    let a = cur.t.adjoint() * &cur.t;
    let rho = DensityMatrix::from_unnormalized(data.dim(), a)?;
    let (log_likelihood, flux) = lik.poisson(&cur);
    let residual = (cur
        .p
        .iter()
        .zip(data.counts.iter().zip(&data.design.efficiency))
        .map(|(p, (n, e))| (flux * e * p - n).powi(2))
        .sum::<f64>()
        / data.counts.len() as f64)
        .sqrt();
    Ok(ReconstructionResult {
        rho,
        log_likelihood,
        iterations,
        converged,
        residual,
        flux,
        history,
    })
}

/// Mean and spread of each metric over Poisson resamples of the counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub resamples: usize,
    pub failures: usize,
    /// Resamples whose fit hit the iteration cap (kept in the statistics).
    pub unconverged: usize,
}

impl BootstrapSummary {
    pub fn get(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.names.iter().position(|n| n == name)?;
        Some((self.mean[k], self.std[k]))
    }
}

pub const MIN_RESAMPLES: usize = 50;

pub fn bootstrap_errors(
    record: &CountsRecord,
    protocol: &TomographyProtocol,
    eff: &EfficiencyModel,
    metrics: &MetricSet,
    n_resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapSummary> {
    let data = TomographyData::from_record(record, protocol, eff)?;
    bootstrap_data(&data, metrics, n_resamples, seed, opts)
}

/// Resample `k` redraws every count as `Poisson(observed)` from stream `k` of
/// `seed`, refits and evaluates `metrics`.
pub fn bootstrap_data(
    data: &TomographyData,
    metrics: &MetricSet,
    n_resamples: usize,
    seed: u64,
    opts: &MleOptions,
) -> Result<BootstrapSummary> {
    if n_resamples < MIN_RESAMPLES {
        return Err(Error::Bootstrap(format!(
            "need at least {MIN_RESAMPLES} resamples, got {n_resamples}"
        )));
    }
    if metrics.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: metrics.dim(),
        });
    }
    let runs: Vec<Option<(Vec<f64>, bool)>> = (0..n_resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let counts = data
                .counts
                .iter()
                .map(|&n| poisson_sample(n, &mut rng) as f64)
                .collect();
            let fit = mle_reconstruct_data(&data.with_counts(counts).ok()?, opts).ok()?;
            let values = metrics.evaluate(&fit.rho).ok()?;
            values
                .iter()
                .all(|v| v.is_finite())
                .then_some((values, fit.converged))
        })
        .collect();

    let ok: Vec<&(Vec<f64>, bool)> = runs.iter().flatten().collect();
    let failures = n_resamples - ok.len();
    if (ok.len() as f64) < 0.9 * n_resamples as f64 {
        return Err(Error::Bootstrap(format!(
            "only {} of {n_resamples} resamples succeeded",
            ok.len()
        )));
    }
    let names = metrics.names();
    let m = ok.len() as f64;
    let mean: Vec<f64> = (0..names.len())
        .map(|i| ok.iter().map(|(v, _)| v[i]).sum::<f64>() / m)
        .collect();
    let std = (0..names.len())
        .map(|i| {
            let var = ok
                .iter()
                .map(|(v, _)| (v[i] - mean[i]).powi(2))
                .sum::<f64>()
                / (m - 1.0);
            var.sqrt()
        })
        .collect();
    Ok(BootstrapSummary {
        names,
        mean,
        std,
        resamples: n_resamples,
        failures,
        unconverged: ok.iter().filter(|(_, c)| !c).count(),
    })
}
