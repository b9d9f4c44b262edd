//! Analyzer model: a phase mask couples a chosen superposition of cores into
//! a single-mode fiber. Coupling an `N`-core superposition costs an extra
//! factor `1/N` on top of the Born probability, so the single-core-to-fiber
//! efficiency of an ideal analyzer is `1/N²`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix, CVector};
use crate::qstate::DensityMatrix;

/// One photon's projection `(1/√N) Σ_k e^{iφ_k}|c_k⟩`. Cores are zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSetting {
    dim: usize,
    cores: Vec<usize>,
    phases: Vec<f64>,
}

impl MeasurementSetting {
    pub fn new(dim: usize, cores: Vec<usize>, phases: Vec<f64>) -> Result<Self> {
        if cores.is_empty() || cores.len() > dim {
            return Err(invalid(format!(
                "a setting needs 1..={dim} cores, got {}",
                cores.len()
            )));
        }
        if cores.len() != phases.len() {
            return Err(invalid("cores and phases differ in length"));
        }
        if let Some(&c) = cores.iter().find(|&&c| c >= dim) {
            return Err(invalid(format!(
                "core {} out of range for d = {dim}",
                c + 1
            )));
        }
        for (k, c) in cores.iter().enumerate() {
            if cores[..k].contains(c) {
                return Err(invalid(format!("core {} listed twice", c + 1)));
            }
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(invalid("phases must be finite"));
        }
        Ok(Self { dim, cores, phases })
    }

    pub fn one_core(dim: usize, core: usize) -> Result<Self> {
        Self::new(dim, vec![core], vec![0.0])
    }

    /// `(|i⟩ + e^{iφ}|j⟩)/√2`.
    pub fn two_core(dim: usize, i: usize, j: usize, phase: f64) -> Result<Self> {
        Self::new(dim, vec![i, j], vec![0.0, phase])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cores(&self) -> &[usize] {
        &self.cores
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn n_cores(&self) -> usize {
        self.cores.len()
    }

    /// Same setting with cores relabeled through `map`.
    pub fn relabeled(&self, map: &[usize]) -> Self {
        Self {
            dim: self.dim,
            cores: self.cores.iter().map(|&c| map[c]).collect(),
            phases: self.phases.clone(),
        }
    }

    /// Text id used in count tables: cores 1-based joined by `+`, each with an
    /// optional phase marker: `i` (π/2), `-` (π), `-i` (3π/2) or a
    /// `@radians` suffix. Example: `1+i2`.
    pub fn label(&self) -> String {
        let mut out = String::new();
        for (k, (&c, &p)) in self.cores.iter().zip(&self.phases).enumerate() {
            if k > 0 {
                out.push('+');
            }
            let wrapped = p.rem_euclid(TAU);
            let core = c + 1;
            let _ = if wrapped == 0.0 {
                write!(out, "{core}")
            } else if wrapped == FRAC_PI_2 {
                write!(out, "i{core}")
            } else if wrapped == PI {
                write!(out, "-{core}")
            } else if wrapped == 3.0 * FRAC_PI_2 {
                write!(out, "-i{core}")
            } else {
                write!(out, "{core}@{p}")
            };
        }
        out
    }

    pub fn parse_label(dim: usize, label: &str) -> Result<Self> {
        let mut cores = Vec::new();
        let mut phases = Vec::new();
        for token in label.trim().split('+') {
            let bad = || Error::Parse(format!("bad setting token {token:?} in {label:?}"));
            let (body, phase) = match token.split_once('@') {
                Some((core, phase)) => (core, phase.parse::<f64>().map_err(|_| bad())?),
                None => {
                    if let Some(rest) = token.strip_prefix("-i") {
                        (rest, 3.0 * FRAC_PI_2)
                    } else if let Some(rest) = token.strip_prefix('-') {
                        (rest, PI)
                    } else if let Some(rest) = token.strip_prefix('i') {
                        (rest, FRAC_PI_2)
                    } else {
                        (token, 0.0)
                    }
                }
            };
            let core: usize = body.parse().map_err(|_| bad())?;
            if core == 0 {
                return Err(bad());
            }
            cores.push(core - 1);
            phases.push(phase);
        }
        Self::new(dim, cores, phases)
    }
}

/// Analyzer coupling efficiency for an `N`-core superposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", try_from = "EfficiencyTable")]
pub enum EfficiencyModel {
    /// `1/N²` from one core into the fiber.
    Ideal,
    /// Measured single-core-to-fiber efficiencies for N = 1..4.
    Experimental,
    Custom {
        from_one_core: Vec<f64>,
    },
}

/// Config form of [`EfficiencyModel`]. Tagged unit variants would accept
/// any extra key, so the table is parsed strictly here first.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EfficiencyTable {
    mode: String,
    from_one_core: Option<Vec<f64>>,
}

impl TryFrom<EfficiencyTable> for EfficiencyModel {
    type Error = String;

    fn try_from(t: EfficiencyTable) -> std::result::Result<Self, String> {
        match (t.mode.as_str(), t.from_one_core) {
            ("ideal", None) => Ok(Self::Ideal),
            ("experimental", None) => Ok(Self::Experimental),
            ("custom", Some(from_one_core)) => Ok(Self::Custom { from_one_core }),
            ("custom", None) => Err("custom efficiency needs from_one_core".into()),
            ("ideal" | "experimental", Some(_)) => Err(format!(
                "from_one_core is only allowed with mode = \"custom\", not {:?}",
                t.mode
            )),
            (other, _) => Err(format!(
                "unknown efficiency mode {other:?}, expected ideal, experimental or custom"
            )),
        }
    }
}

pub const EXPERIMENTAL_FROM_ONE_CORE: [f64; 4] = [0.54, 0.13, 0.048, 0.036];

impl EfficiencyModel {
    /// Efficiency of light in one core reaching the fiber when the mask
    /// addresses `n` cores.
    pub fn from_one_core(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(invalid("setting with zero cores"));
        }
        let table = |t: &[f64]| {
            t.get(n - 1)
                .copied()
                .ok_or_else(|| invalid(format!("no efficiency for {n}-core settings")))
        };
        match self {
            Self::Ideal => Ok(1.0 / (n * n) as f64),
            Self::Experimental => table(&EXPERIMENTAL_FROM_ONE_CORE),
            Self::Custom { from_one_core } => table(from_one_core),
        }
    }

    /// Multiplier on the Born probability: the coupled fraction of the
    /// projected photon, `N · from_one_core(N)` (equals `1/N` when ideal).
    pub fn detection_factor(&self, n: usize) -> Result<f64> {
        Ok(n as f64 * self.from_one_core(n)?)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        for n in 1..=dim {
            let e = self
                .from_one_core(n)
                .map_err(|e| Error::Config(e.to_string()))?;
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Config(format!(
                    "efficiency for N = {n} outside (0, 1]"
                )));
            }
        }
        Ok(())
    }
}

pub fn projector_vector(s: &MeasurementSetting) -> CVector {
    let mut v = CVector::zeros(s.dim);
    let norm = 1.0 / (s.n_cores() as f64).sqrt();
    for (&c, &p) in s.cores.iter().zip(&s.phases) {
        v[c] = linalg::cis(p) * norm;
    }
    v
}

/// Non-zero entries of `ψ₁ ⊗ ψ₂` in the two-photon basis.
#[derive(Debug, Clone)]
pub(crate) struct SparseProjector {
    pub idx: Vec<usize>,
    pub amp: Vec<Complex64>,
}

impl SparseProjector {
    pub fn new(s1: &MeasurementSetting, s2: &MeasurementSetting) -> Self {
        let d = s1.dim;
        let (v1, v2) = (projector_vector(s1), projector_vector(s2));
        let mut idx = Vec::with_capacity(s1.n_cores() * s2.n_cores());
        let mut amp = Vec::with_capacity(idx.capacity());
        for &a in &s1.cores {
            for &b in &s2.cores {
                idx.push(a * d + b);
                amp.push(v1[a] * v2[b]);
            }
        }
        Self { idx, amp }
    }

    /// `⟨v|m|v⟩`.
    pub fn expectation(&self, m: &CMatrix) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (&r, &ar) in self.idx.iter().zip(&self.amp) {
            let mut row = Complex64::new(0.0, 0.0);
            for (&c, &ac) in self.idx.iter().zip(&self.amp) {
                row += m[(r, c)] * ac;
            }
            acc += ar.conj() * row;
        }
        acc.re
    }

    /// `m += w·|v⟩⟨v|`.
    pub fn accumulate(&self, m: &mut CMatrix, w: f64) {
        for (&r, &ar) in self.idx.iter().zip(&self.amp) {
            for (&c, &ac) in self.idx.iter().zip(&self.amp) {
                m[(r, c)] += ar * ac.conj() * w;
            }
        }
    }
}

fn check_dims(rho: &DensityMatrix, s1: &MeasurementSetting, s2: &MeasurementSetting) -> Result<()> {
    for s in [s1, s2] {
        if s.dim != rho.dim() {
            return Err(Error::DimensionMismatch {
                expected: rho.dim(),
                found: s.dim,
            });
        }
    }
    Ok(())
}

/// Coincidence probability per pair: `η(N₁)·η(N₂)·⟨ψ₁ψ₂|ρ|ψ₁ψ₂⟩`.
pub fn detection_probability(
    rho: &DensityMatrix,
    s1: &MeasurementSetting,
    s2: &MeasurementSetting,
    eff: &EfficiencyModel,
) -> Result<f64> {
    check_dims(rho, s1, s2)?;
    let born = SparseProjector::new(s1, s2)
        .expectation(rho.matrix())
        .max(0.0);
    Ok(eff.detection_factor(s1.n_cores())? * eff.detection_factor(s2.n_cores())? * born)
}

/// Least-squares fit of `y = offset + amplitude·cos(φ − phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Location of the fitted maximum, in `(−π, π]`.
    pub phase: f64,
}

impl CosineFit {
    /// `(max − min)/(max + min)` of the fitted curve.
    pub fn visibility(&self) -> f64 {
        if self.offset <= 0.0 {
            0.0
        } else {
            (self.amplitude / self.offset).min(1.0)
        }
    }
}

pub fn fit_cosine(points: &[(f64, f64)]) -> Result<CosineFit> {
    if points.len() < 4 {
        return Err(invalid(format!(
            "cosine fit needs >= 4 points, got {}",
            points.len()
        )));
    }
    let x = DMatrix::from_fn(points.len(), 3, |r, c| match c {
        0 => 1.0,
        1 => points[r].0.cos(),
        _ => points[r].0.sin(),
    });
    let y = DVector::from_iterator(points.len(), points.iter().map(|p| p.1));
    let coef = nalgebra::Cholesky::new(x.transpose() * &x)
        .ok_or_else(|| Error::Singular("sweep phases do not determine a cosine".into()))?
        .solve(&(x.transpose() * y));
    Ok(CosineFit {
        offset: coef[0],
        amplitude: coef[1].hypot(coef[2]),
        phase: coef[2].atan2(coef[1]),
    })
}

/// `n` evenly spaced phases over `[0, 2π)`.
pub fn default_sweep(n: usize) -> Vec<f64> {
    (0..n).map(|k| TAU * k as f64 / n as f64).collect()
}

pub const DEFAULT_SWEEP_POINTS: usize = 16;

#[derive(Debug, Clone)]
pub struct Fringe {
    pub points: Vec<(f64, f64)>,
    pub fit: CosineFit,
}

impl Fringe {
    pub fn visibility(&self) -> f64 {
        self.fit.visibility()
    }
}

/// Coincidence probability for `(|i⟩+e^{iφ₁}|j⟩)/√2 ⊗ (|i⟩+e^{iφ₂}|j⟩)/√2`
/// along a sweep of `φ₂`.
pub fn predict_fringe(
    rho: &DensityMatrix,
    i: usize,
    j: usize,
    phi1: f64,
    sweep: &[f64],
) -> Result<Fringe> {
    if i == j {
        return Err(invalid("fringe needs two distinct cores"));
    }
    if sweep.len() < 4 {
        return Err(invalid(format!(
            "fringe sweep needs >= 4 points, got {}",
            sweep.len()
        )));
    }
    let d = rho.dim();
    let s1 = MeasurementSetting::two_core(d, i, j, phi1)?;
    let points = sweep
        .iter()
        .map(|&phi2| {
            let s2 = MeasurementSetting::two_core(d, i, j, phi2)?;
            Ok((
                phi2,
                detection_probability(rho, &s1, &s2, &EfficiencyModel::Ideal)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_cosine(&points)?;
    Ok(Fringe { points, fit })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountEntry {
    pub setting1: MeasurementSetting,
    pub setting2: MeasurementSetting,
    pub counts: u64,
}

/// Coincidence counts per setting pair with acquisition metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CountsRecord {
    pub dim: usize,
    pub entries: Vec<CountEntry>,
    pub integration_time_s: f64,
    pub pair_rate_hz: f64,
    pub seed: u64,
}

impl CountsRecord {
    pub fn get(&self, s1: &MeasurementSetting, s2: &MeasurementSetting) -> Option<u64> {
        let (l1, l2) = (s1.label(), s2.label());
        self.entries
            .iter()
            .find(|e| e.setting1.label() == l1 && e.setting2.label() == l2)
            .map(|e| e.counts)
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|e| e.counts).sum()
    }

    /// Flat table: `#`-prefixed metadata lines, then
    /// `setting1,setting2,counts` rows.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# dim={}", self.dim);
        let _ = writeln!(out, "# integration_time_s={}", self.integration_time_s);
        let _ = writeln!(out, "# pair_rate_hz={}", self.pair_rate_hz);
        let _ = writeln!(out, "# seed={}", self.seed);
        out.push_str("setting1,setting2,counts\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{}",
                e.setting1.label(),
                e.setting2.label(),
                e.counts
            );
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut integration_time_s = None;
        let mut pair_rate_hz = 0.0;
        let mut seed = 0;
        let mut entries = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                let Some((key, value)) = meta.trim().split_once('=') else {
                    continue;
                };
                let value = value.trim();
                match key.trim() {
                    "dim" => dim = Some(value.parse::<usize>().map_err(|_| bad("bad dim"))?),
                    "integration_time_s" => {
                        integration_time_s = Some(
                            value
                                .parse::<f64>()
                                .map_err(|_| bad("bad integration time"))?,
                        )
                    }
                    "pair_rate_hz" => {
                        pair_rate_hz = value.parse().map_err(|_| bad("bad pair rate"))?
                    }
                    "seed" => seed = value.parse().map_err(|_| bad("bad seed"))?,
                    _ => {}
                }
                continue;
            }
            if !header_seen {
                if line.replace(' ', "") != "setting1,setting2,counts" {
                    return Err(bad("expected header setting1,setting2,counts"));
                }
                header_seen = true;
                continue;
            }
            let d = dim.ok_or_else(|| bad("missing '# dim=' metadata before data"))?;
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(bad("expected 3 columns"));
            }
            entries.push(CountEntry {
                setting1: MeasurementSetting::parse_label(d, cols[0])?,
                setting2: MeasurementSetting::parse_label(d, cols[1])?,
                counts: cols[2]
                    .parse()
                    .map_err(|_| bad("counts must be a non-negative integer"))?,
            });
        }
        Ok(Self {
            dim: dim.ok_or_else(|| Error::Parse("missing '# dim=' metadata".into()))?,
            entries,
            integration_time_s: integration_time_s
                .ok_or_else(|| Error::Parse("missing '# integration_time_s=' metadata".into()))?,
            pair_rate_hz,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_table())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_table(&std::fs::read_to_string(path)?)
    }
}

/// Per-index random stream derived from one seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) fn poisson_sample(mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => mean.round() as u64,
    }
}

fn check_rates(pair_rate_hz: f64, integration_time_s: f64) -> Result<()> {
    if !(pair_rate_hz > 0.0) || !(integration_time_s > 0.0) {
        return Err(invalid("pair rate and integration time must be positive"));
    }
    Ok(())
}

fn expected_means(
    rho: &DensityMatrix,
    pairs: &[(MeasurementSetting, MeasurementSetting)],
    flux: f64,
    eff: &EfficiencyModel,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(s1, s2)| Ok(flux * detection_probability(rho, s1, s2, eff)?))
        .collect()
}

/// Poisson coincidence counts with mean `pair_rate·time·p`. Pair `k` draws
/// from its own stream of `seed`, so the record does not depend on
/// scheduling.
pub fn simulate_counts(
    rho: &DensityMatrix,
    pairs: &[(MeasurementSetting, MeasurementSetting)],
    pair_rate_hz: f64,
    integration_time_s: f64,
    eff: &EfficiencyModel,
    seed: u64,
) -> Result<CountsRecord> {
    check_rates(pair_rate_hz, integration_time_s)?;
    let means = expected_means(rho, pairs, pair_rate_hz * integration_time_s, eff)?;
    let counts: Vec<u64> = means
        .par_iter()
        .enumerate()
        .map(|(k, &mean)| poisson_sample(mean, &mut stream_rng(seed, k as u64)))
        .collect();
    Ok(record(
        rho.dim(),
        pairs,
        counts,
        pair_rate_hz,
        integration_time_s,
        seed,
    ))
}

/// Noise-free counts: the Poisson means rounded to integers.
pub fn expected_counts(
    rho: &DensityMatrix,
    pairs: &[(MeasurementSetting, MeasurementSetting)],
    pair_rate_hz: f64,
    integration_time_s: f64,
    eff: &EfficiencyModel,
) -> Result<CountsRecord> {
    check_rates(pair_rate_hz, integration_time_s)?;
    let means = expected_means(rho, pairs, pair_rate_hz * integration_time_s, eff)?;
    let counts = means.iter().map(|m| m.round() as u64).collect();
    Ok(record(
        rho.dim(),
        pairs,
        counts,
        pair_rate_hz,
        integration_time_s,
        0,
    ))
}

fn record(
    dim: usize,
    pairs: &[(MeasurementSetting, MeasurementSetting)],
    counts: Vec<u64>,
    pair_rate_hz: f64,
    integration_time_s: f64,
    seed: u64,
) -> CountsRecord {
    CountsRecord {
        dim,
        entries: pairs
            .iter()
            .zip(counts)
            .map(|((s1, s2), counts)| CountEntry {
                setting1: s1.clone(),
                setting2: s2.clone(),
                counts,
            })
            .collect(),
        integration_time_s,
        pair_rate_hz,
        seed,
    }
}

/// Pixel rectangle of one core's mask subsection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    fn overlaps(&self, o: &Region) -> bool {
        self.x0 < o.x0 + o.width
            && o.x0 < self.x0 + self.width
            && self.y0 < o.y0 + o.height
            && o.y0 < self.y0 + self.height
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x0 + self.width).contains(&x)
            && (self.y0..self.y0 + self.height).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlmGeometry {
    pub width_px: usize,
    pub height_px: usize,
    pub pitch_m: f64,
    /// One subsection per core, in core order.
    pub regions: Vec<Region>,
    pub blaze_period_px: f64,
}

/// Grating period used to dump light from unaddressed cores, along `y`.
pub const DUMP_PERIOD_PX: f64 = 4.0;

impl Default for SlmGeometry {
    /// 792×600 pixels of 20 µm split into quadrants; cores run clockwise
    /// from the top-left quadrant.
    fn default() -> Self {
        let (w, h) = (792, 600);
        let (hw, hh) = (w / 2, h / 2);
        Self {
            width_px: w,
            height_px: h,
            pitch_m: 20e-6,
            regions: vec![
                Region {
                    x0: 0,
                    y0: 0,
                    width: hw,
                    height: hh,
                },
                Region {
                    x0: hw,
                    y0: 0,
                    width: hw,
                    height: hh,
                },
                Region {
                    x0: hw,
                    y0: hh,
                    width: hw,
                    height: hh,
                },
                Region {
                    x0: 0,
                    y0: hh,
                    width: hw,
                    height: hh,
                },
            ],
            blaze_period_px: 16.0,
        }
    }
}

impl SlmGeometry {
    /// Quadrants for `d = 4`; otherwise the same panel cut into `d` vertical
    /// strips.
    pub fn for_dim(d: usize) -> Self {
        let base = Self::default();
        if d == 4 {
            return base;
        }
        let strip = base.width_px / d.max(1);
        Self {
            regions: (0..d)
                .map(|k| Region {
                    x0: k * strip,
                    y0: 0,
                    width: strip,
                    height: base.height_px,
                })
                .collect(),
            ..base
        }
    }
}

/// 8-bit phase image; level `q` stands for phase `2π·q/256`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<u8>,
}

impl PhaseMask {
    pub fn level(&self, x: usize, y: usize) -> u8 {
        self.levels[y * self.width + x]
    }

    pub fn phase(&self, x: usize, y: usize) -> f64 {
        TAU * self.level(x, y) as f64 / 256.0
    }

    /// Binary portable graymap (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.levels);
        out
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

fn quantize(phase_fraction: f64) -> u8 {
    ((phase_fraction.rem_euclid(1.0) * 256.0).floor() as i64).clamp(0, 255) as u8
}

/// Saw-tooth blazed grating in each addressed core's subsection, offset by
/// `φ_k/(2π)` of a period; unaddressed subsections get the dump grating.
pub fn slm_mask(s: &MeasurementSetting, geometry: &SlmGeometry) -> Result<PhaseMask> {
    let g = geometry;
    if g.regions.len() != s.dim {
        return Err(invalid(format!(
            "geometry has {} regions for a d = {} setting",
            g.regions.len(),
            s.dim
        )));
    }
    if !(g.blaze_period_px > 0.0) {
        return Err(invalid("blaze period must be positive"));
    }
    for (k, r) in g.regions.iter().enumerate() {
        if r.x0 + r.width > g.width_px || r.y0 + r.height > g.height_px {
            return Err(invalid(format!(
                "region of core {} exceeds the panel",
                k + 1
            )));
        }
        if let Some(m) = g.regions[..k].iter().position(|o| o.overlaps(r)) {
            return Err(invalid(format!(
                "regions of cores {} and {} overlap",
                m + 1,
                k + 1
            )));
        }
    }
    let mut offset = vec![None; s.dim];
    for (&c, &p) in s.cores.iter().zip(&s.phases) {
        offset[c] = Some(p / TAU);
    }
    let mut levels = vec![0u8; g.width_px * g.height_px];
    for (core, region) in g.regions.iter().enumerate() {
        for y in region.y0..region.y0 + region.height {
            for x in region.x0..region.x0 + region.width {
                debug_assert!(region.contains(x, y));
                levels[y * g.width_px + x] = match offset[core] {
                    Some(o) => quantize(x as f64 / g.blaze_period_px + o),
                    None => quantize(y as f64 / DUMP_PERIOD_PX),
                };
            }
        }
    }
    Ok(PhaseMask {
        width: g.width_px,
        height: g.height_px,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{maximally_entangled, DensityMatrix};
    use approx::assert_abs_diff_eq;

    fn beta() -> DensityMatrix {
        maximally_entangled(4).unwrap().density()
    }

    #[test]
    fn projector_vectors() {
        let e1 = projector_vector(&MeasurementSetting::one_core(4, 0).unwrap());
        assert_eq!(e1[0], Complex64::new(1.0, 0.0));
        assert_eq!(e1.norm(), 1.0);
        let minus = projector_vector(&MeasurementSetting::two_core(4, 0, 1, PI).unwrap());
        let r = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(minus[0].re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(minus[1].re, -r, epsilon = 1e-15);
        assert_abs_diff_eq!(minus[1].im, 0.0, epsilon = 1e-15);
        let all =
            projector_vector(&MeasurementSetting::new(4, vec![0, 1, 2, 3], vec![0.0; 4]).unwrap());
        assert!(all.iter().all(|z| (z.re - 0.5).abs() < 1e-15));
    }

    #[test]
    fn setting_validation() {
        assert!(MeasurementSetting::new(4, vec![0, 0], vec![0.0, 0.0]).is_err());
        assert!(MeasurementSetting::new(4, vec![4], vec![0.0]).is_err());
        assert!(MeasurementSetting::new(4, vec![], vec![]).is_err());
    }

    #[test]
    fn labels_round_trip() {
        for (s, l) in [
            (MeasurementSetting::one_core(4, 2).unwrap(), "3"),
            (MeasurementSetting::two_core(4, 0, 1, 0.0).unwrap(), "1+2"),
            (
                MeasurementSetting::two_core(4, 0, 3, FRAC_PI_2).unwrap(),
                "1+i4",
            ),
            (MeasurementSetting::two_core(4, 1, 2, PI).unwrap(), "2+-3"),
            (
                MeasurementSetting::two_core(4, 1, 2, 3.0 * FRAC_PI_2).unwrap(),
                "2+-i3",
            ),
        ] {
            assert_eq!(s.label(), l);
            assert_eq!(MeasurementSetting::parse_label(4, l).unwrap(), s);
        }
        let odd = MeasurementSetting::two_core(4, 0, 1, 0.3).unwrap();
        assert_eq!(
            MeasurementSetting::parse_label(4, &odd.label()).unwrap(),
            odd
        );
        assert!(MeasurementSetting::parse_label(4, "0").is_err());
        assert!(MeasurementSetting::parse_label(4, "1+x").is_err());
    }

    #[test]
    fn ideal_efficiencies() {
        let e = EfficiencyModel::Ideal;
        let v: Vec<f64> = (1..=4).map(|n| e.from_one_core(n).unwrap()).collect();
        assert_eq!(v, vec![1.0, 0.25, 1.0 / 9.0, 0.0625]);
        // Published values 100%, 25%, 11%, 6.3% are these rounded.
        for (x, p) in v.iter().zip([1.0, 0.25, 0.11, 0.063]) {
            assert!((x - p).abs() < 0.0015);
        }
        assert_abs_diff_eq!(e.detection_factor(2).unwrap(), 0.5);
        assert_eq!(
            EfficiencyModel::Experimental.from_one_core(3).unwrap(),
            0.048
        );
        assert!(EfficiencyModel::Experimental.from_one_core(5).is_err());
    }

    #[test]
    fn detection_probability_anchors() {
        let rho = beta();
        let ideal = EfficiencyModel::Ideal;
        let plus = MeasurementSetting::two_core(4, 0, 1, 0.0).unwrap();
        let minus = MeasurementSetting::two_core(4, 0, 1, PI).unwrap();
        let one = MeasurementSetting::one_core(4, 0).unwrap();
        assert_abs_diff_eq!(
            detection_probability(&rho, &plus, &plus, &ideal).unwrap(),
            1.0 / 16.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            detection_probability(&rho, &plus, &minus, &ideal).unwrap(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            detection_probability(&rho, &one, &one, &ideal).unwrap(),
            0.25,
            epsilon = 1e-15
        );
        let bad = MeasurementSetting::one_core(3, 0).unwrap();
        assert!(detection_probability(&rho, &bad, &one, &ideal).is_err());
    }

    #[test]
    fn sparse_matches_dense() {
        let rho = crate::qstate::make_correlated_state(&[
            Complex64::new(0.3, 0.2),
            Complex64::new(0.5, -0.1),
            Complex64::new(0.4, 0.0),
            Complex64::new(0.1, 0.6),
        ])
        .unwrap()
        .density();
        let s1 = MeasurementSetting::new(4, vec![0, 2, 3], vec![0.0, 0.7, -1.1]).unwrap();
        let s2 = MeasurementSetting::two_core(4, 3, 1, 2.2).unwrap();
        let v = linalg::kron_vec(&projector_vector(&s1), &projector_vector(&s2));
        let dense = linalg::expectation(rho.matrix(), &v);
        assert_abs_diff_eq!(
            SparseProjector::new(&s1, &s2).expectation(rho.matrix()),
            dense,
            epsilon = 1e-15
        );
    }

    #[test]
    fn one_core_marginals_sum_to_one() {
        let rho = crate::qstate::make_correlated_state_real(&[0.2, 0.5, 0.7, 0.4])
            .unwrap()
            .density();
        let unit = EfficiencyModel::Custom {
            from_one_core: vec![1.0],
        };
        let total: f64 = (0..4)
            .flat_map(|a| (0..4).map(move |b| (a, b)))
            .map(|(a, b)| {
                let s1 = MeasurementSetting::one_core(4, a).unwrap();
                let s2 = MeasurementSetting::one_core(4, b).unwrap();
                detection_probability(&rho, &s1, &s2, &unit).unwrap()
            })
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn fringe_of_beta() {
        let f = predict_fringe(&beta(), 0, 1, 0.7, &default_sweep(16)).unwrap();
        assert_abs_diff_eq!(f.visibility(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.fit.phase, -0.7, epsilon = 1e-12);
        let flat = predict_fringe(
            &DensityMatrix::maximally_mixed(4).unwrap(),
            0,
            1,
            0.0,
            &default_sweep(16),
        )
        .unwrap();
        assert!(flat.visibility() < 1e-12);
        assert!(predict_fringe(&beta(), 0, 1, 0.0, &default_sweep(3)).is_err());
        assert!(predict_fringe(&beta(), 1, 1, 0.0, &default_sweep(8)).is_err());
    }

    #[test]
    fn zero_probability_gives_zero_counts() {
        let rho = beta();
        let pairs = vec![(
            MeasurementSetting::one_core(4, 0).unwrap(),
            MeasurementSetting::one_core(4, 1).unwrap(),
        )];
        for seed in 0..20 {
            let rec =
                simulate_counts(&rho, &pairs, 1e6, 60.0, &EfficiencyModel::Ideal, seed).unwrap();
            assert_eq!(rec.entries[0].counts, 0);
        }
    }

    #[test]
    fn poisson_mean_at_one_million() {
        let rho = beta();
        let one = MeasurementSetting::one_core(4, 0).unwrap();
        let pairs = vec![(one.clone(), one)];
        // p = 1/4, so flux 4e6 gives an expected count of 1e6.
        let mean = (0..100)
            .map(|seed| {
                simulate_counts(&rho, &pairs, 4e6, 1.0, &EfficiencyModel::Ideal, seed)
                    .unwrap()
                    .entries[0]
                    .counts as f64
            })
            .sum::<f64>()
            / 100.0;
        assert!((mean - 1e6).abs() <= 300.0, "mean {mean}");
    }

    #[test]
    fn counts_table_round_trip() {
        let rho = beta();
        let pairs: Vec<_> = ["1", "1+i2", "2+-3"]
            .iter()
            .map(|l| {
                let s = MeasurementSetting::parse_label(4, l).unwrap();
                (s.clone(), s)
            })
            .collect();
        let rec =
            simulate_counts(&rho, &pairs, 1e5, 60.0, &EfficiencyModel::Experimental, 9).unwrap();
        let back = CountsRecord::from_table(&rec.to_table()).unwrap();
        assert_eq!(back, rec);
        assert!(CountsRecord::from_table("setting1,setting2,counts\n1,1,5\n").is_err());
        let bad = "# dim=4\n# integration_time_s=1\nsetting1,setting2,counts\n1,1,-5\n";
        assert!(CountsRecord::from_table(bad).is_err());
    }

    #[test]
    fn mask_single_core_is_sawtooth() {
        let g = SlmGeometry::default();
        let m = slm_mask(&MeasurementSetting::one_core(4, 0).unwrap(), &g).unwrap();
        assert_eq!(m.width * m.height, m.levels.len());
        for x in 0..64 {
            let expected = quantize(x as f64 / 16.0);
            assert_eq!(m.level(x, 10), expected);
            assert_eq!(m.level(x, 200), expected);
        }
        assert_eq!(m.level(0, 0), 0);
        assert_eq!(m.level(8, 0), 128);
        // Core 2 is not addressed: dump grating along y.
        assert_eq!(m.level(500, 1), quantize(0.25));
    }

    #[test]
    fn mask_phase_shifts_by_half_period() {
        let g = SlmGeometry::default();
        let s = MeasurementSetting::two_core(4, 0, 1, PI).unwrap();
        let m = slm_mask(&s, &g).unwrap();
        for x in 396..460 {
            assert_eq!(m.level(x, 20), quantize((x as f64 + 8.0) / 16.0));
        }
        let max_phase = (0..m.width).map(|x| m.phase(x, 20)).fold(0.0, f64::max);
        assert!(max_phase < TAU);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n792 600\n255\n"));
        assert_eq!(pgm.len(), 15 + 792 * 600);
    }

    #[test]
    fn mask_rejects_overlap() {
        let mut g = SlmGeometry::default();
        g.regions[1].x0 = 100;
        assert!(slm_mask(&MeasurementSetting::one_core(4, 0).unwrap(), &g).is_err());
    }
}
