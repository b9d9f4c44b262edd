//! Multi-core fiber transport model.
//!
//! Every two-photon basis term `|a⟩₁|b⟩₂` picks up a relative group delay
//! `τ(a,b) = (n_a·L₁ − n_b·L₂)/c`. With a broadband Gaussian photon spectrum
//! two terms keep a coherence `exp(−(π·Δf·Δτ)²/(4 ln 2))`, which is further
//! multiplied by a fitted residual visibility. Crosstalk enters as an
//! incoherent admixture over the non-matching core pairs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, CMatrix};
use crate::qstate::DensityMatrix;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest core-to-core group index difference of the reference fiber.
pub const REFERENCE_GROUP_INDEX_SPREAD: f64 = 6.5e-4;

/// Transport noise description. Lengths and wavelengths in meters, angles in
/// degrees, phases in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// Per-core group indices; their count fixes the qudit dimension.
    pub group_indices: Vec<f64>,
    /// Length of MCF2.
    pub length_m: f64,
    /// `L₁ − L₂`.
    #[serde(default)]
    pub length_mismatch_m: f64,
    pub center_wavelength_m: f64,
    pub bandwidth_fwhm_m: f64,
    #[serde(default)]
    pub crosstalk_fraction: f64,
    /// Symmetric `d×d` residual pair visibilities with unit diagonal. Empty
    /// means fully coherent.
    #[serde(default)]
    pub residual_visibility: Vec<Vec<f64>>,
    /// Static per-core phases applied to photon 1. Empty means zero.
    #[serde(default)]
    pub phase_biases_rad: Vec<f64>,
    /// Rotation of MCF1 about its axis, a multiple of `360/d`.
    #[serde(default)]
    pub rotation_1_deg: i32,
}

impl ChannelParams {
    /// Noise-free 30 cm fibers at 1560 nm.
    pub fn ideal(dim: usize) -> Self {
        Self {
            group_indices: vec![1.47; dim],
            length_m: 0.3,
            length_mismatch_m: 0.0,
            center_wavelength_m: 1560e-9,
            bandwidth_fwhm_m: 8.3e-9,
            crosstalk_fraction: 0.0,
            residual_visibility: Vec::new(),
            phase_biases_rad: Vec::new(),
            rotation_1_deg: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.group_indices.len()
    }

    pub fn length_1(&self) -> f64 {
        self.length_m + self.length_mismatch_m
    }

    pub fn length_2(&self) -> f64 {
        self.length_m
    }

    pub fn group_index_spread(&self) -> f64 {
        let max = self.group_indices.iter().copied().fold(f64::MIN, f64::max);
        let min = self.group_indices.iter().copied().fold(f64::MAX, f64::min);
        max - min
    }

    /// Spectral width in frequency, `c·Δλ/λ²`.
    pub fn bandwidth_hz(&self) -> f64 {
        SPEED_OF_LIGHT * self.bandwidth_fwhm_m
            / (self.center_wavelength_m * self.center_wavelength_m)
    }

    pub fn residual(&self, i: usize, j: usize) -> f64 {
        if i == j || self.residual_visibility.is_empty() {
            1.0
        } else {
            self.residual_visibility[i][j]
        }
    }

    pub fn phase_bias(&self, i: usize) -> f64 {
        self.phase_biases_rad.get(i).copied().unwrap_or(0.0)
    }

    /// Unit and range checks. Values that look like they were entered in
    /// nanometers or centimeters are rejected here.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let cfg = |m: String| Err(Error::Config(m));
        if d < 2 {
            return cfg(format!("need at least 2 group indices, got {d}"));
        }
        if self.group_indices.iter().any(|n| !(1.0..5.0).contains(n)) {
            return cfg("group_indices must lie in [1, 5)".into());
        }
        if !(self.length_m > 0.0 && self.length_m <= 1.0e6) {
            return cfg(format!("length_m = {} outside (0, 1e6] m", self.length_m));
        }
        if !self.length_mismatch_m.is_finite() || self.length_1() <= 0.0 {
            return cfg(format!(
                "length_mismatch_m = {} leaves MCF1 with non-positive length",
                self.length_mismatch_m
            ));
        }
        if !(1e-7..1e-5).contains(&self.center_wavelength_m) {
            return cfg(format!(
                "center_wavelength_m = {} is not an optical wavelength in meters",
                self.center_wavelength_m
            ));
        }
        if !(self.bandwidth_fwhm_m >= 0.0 && self.bandwidth_fwhm_m < self.center_wavelength_m) {
            return cfg(format!(
                "bandwidth_fwhm_m = {} must be in [0, center_wavelength_m)",
                self.bandwidth_fwhm_m
            ));
        }
        if !(0.0..=1.0).contains(&self.crosstalk_fraction) {
            return cfg(format!(
                "crosstalk_fraction = {} outside [0,1]",
                self.crosstalk_fraction
            ));
        }
        if !self.phase_biases_rad.is_empty() && self.phase_biases_rad.len() != d {
            return cfg(format!("phase_biases_rad needs {d} entries"));
        }
        if self.phase_biases_rad.iter().any(|p| !p.is_finite()) {
            return cfg("phase_biases_rad must be finite".into());
        }
        rotation_permutation(self.rotation_1_deg, d).map_err(|e| Error::Config(e.to_string()))?;
        if !self.residual_visibility.is_empty() {
            let v = &self.residual_visibility;
            if v.len() != d || v.iter().any(|row| row.len() != d) {
                return cfg(format!("residual_visibility must be {d}x{d}"));
            }
            for i in 0..d {
                if (v[i][i] - 1.0).abs() > 1e-12 {
                    return cfg("residual_visibility diagonal must be 1".into());
                }
                for j in 0..d {
                    if !(0.0..=1.0).contains(&v[i][j]) {
                        return cfg(format!("residual_visibility[{i}][{j}] outside [0,1]"));
                    }
                    if (v[i][j] - v[j][i]).abs() > 1e-12 {
                        return cfg("residual_visibility must be symmetric".into());
                    }
                }
            }
            // The damping kernel contains √V ⊗ √V; it must be PSD for the
            // channel to map states to states.
            let w = CMatrix::from_fn(d, d, |i, j| v[i][j].sqrt().into());
            let min = linalg::hermitian_eigenvalues(&w)[0];
            if min < -1e-12 {
                return cfg(format!(
                    "element-wise square root of residual_visibility is not PSD (min eigenvalue {min:.3e})"
                ));
            }
        }
        Ok(())
    }
}

fn spectral_coherence(bandwidth_hz: f64, delay_s: f64) -> f64 {
    let x = std::f64::consts::PI * bandwidth_hz * delay_s;
    (-x * x / (4.0 * std::f64::consts::LN_2)).exp()
}

/// Coherence left between the correlated terms `|i,i⟩` and `|j,j⟩` of
/// unrotated fibers.
pub fn pair_coherence(params: &ChannelParams, i: usize, j: usize) -> Result<f64> {
    let d = params.dim();
    if i >= d || j >= d {
        return Err(invalid(format!("core index out of range for d = {d}")));
    }
    if i == j {
        return Err(invalid("pair coherence needs two distinct cores"));
    }
    let delay = (params.group_indices[i] - params.group_indices[j]).abs()
        * params.length_mismatch_m.abs()
        / SPEED_OF_LIGHT;
    Ok(params.residual(i, j) * spectral_coherence(params.bandwidth_hz(), delay))
}

/// Core relabeling: core `k` maps to `map[k]` (zero-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorePermutation(pub Vec<usize>);

impl CorePermutation {
    pub fn identity(d: usize) -> Self {
        Self((0..d).collect())
    }

    pub fn apply(&self, k: usize) -> usize {
        self.0[k]
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn after(&self, first: &CorePermutation) -> Self {
        Self(first.0.iter().map(|&k| self.0[k]).collect())
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (k, &m) in self.0.iter().enumerate() {
            inv[m] = k;
        }
        Self(inv)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(k, &m)| k == m)
    }
}

/// Cores are numbered sequentially around the fiber, so a rotation by
/// `360/d` degrees shifts every core to the next one.
pub fn rotation_permutation(angle_deg: i32, d: usize) -> Result<CorePermutation> {
    if d < 2 || 360 % d != 0 {
        return Err(invalid(format!(
            "rotations need 360 divisible by d, got d = {d}"
        )));
    }
    let step = (360 / d) as i32;
    if angle_deg % step != 0 {
        return Err(invalid(format!(
            "rotation angle {angle_deg} is not a multiple of {step} degrees"
        )));
    }
    let shift = (angle_deg / step).rem_euclid(d as i32) as usize;
    Ok(CorePermutation((0..d).map(|k| (k + shift) % d).collect()))
}

/// Transports `rho_in` through the fiber pair.
///
/// Steps: relabel photon-1 cores by the rotation, apply the photon-1 phase
/// biases, damp every element by the delay/residual kernel, then mix in the
/// incoherent crosstalk.
pub fn apply_channel(rho_in: &DensityMatrix, params: &ChannelParams) -> Result<DensityMatrix> {
    let d = rho_in.dim();
    if params.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: params.dim(),
        });
    }
    params.validate()?;
    let n = d * d;
    let perm = rotation_permutation(params.rotation_1_deg, d)?;
    let src = rho_in.matrix();

    let mut rotated = CMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let (a, b) = (r / d, r % d);
            let (a2, b2) = (c / d, c % d);
            rotated[(perm.apply(a) * d + b, perm.apply(a2) * d + b2)] = src[(r, c)];
        }
    }

    // Photon-1 label a now sits in core a of MCF1.
    let l1 = params.length_1();
    let l2 = params.length_2();
    let delay: Vec<f64> = (0..n)
        .map(|r| {
            let (a, b) = (r / d, r % d);
            (params.group_indices[a] * l1 - params.group_indices[b] * l2) / SPEED_OF_LIGHT
        })
        .collect();
    let bw = params.bandwidth_hz();
    let w = |i: usize, j: usize| params.residual(i, j).sqrt();

    let eps = params.crosstalk_fraction;
    let xtalk_weight = 1.0 / (d * (d - 1)) as f64;
    let out = CMatrix::from_fn(n, n, |r, c| {
        let (a, b) = (r / d, r % d);
        let (a2, b2) = (c / d, c % d);
        let phase = linalg::cis(params.phase_bias(a) - params.phase_bias(a2));
        let damping = if r == c {
            1.0
        } else {
            spectral_coherence(bw, delay[r] - delay[c]) * w(a, a2) * w(b, b2)
        };
        let mut z = rotated[(r, c)] * phase * damping * (1.0 - eps);
        if r == c && a != b {
            z += eps * xtalk_weight;
        }
        z
    });
    DensityMatrix::from_unnormalized(d, out)
}

/// Splice plan for a cyclic core-permuting compensator.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorPlan {
    pub dim: usize,
    pub total_length_m: f64,
    pub splice_positions_m: Vec<f64>,
}

impl CompensatorPlan {
    /// Group delay accumulated by a photon launched into each core, with the
    /// mode advancing to the next core at every splice.
    pub fn per_core_delays(&self, group_indices: &[f64]) -> Result<Vec<f64>> {
        if group_indices.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: group_indices.len(),
            });
        }
        let mut bounds = vec![0.0];
        bounds.extend(&self.splice_positions_m);
        bounds.push(self.total_length_m);
        Ok((0..self.dim)
            .map(|start| {
                bounds
                    .windows(2)
                    .enumerate()
                    .map(|(seg, w)| group_indices[(start + seg) % self.dim] * (w[1] - w[0]))
                    .sum::<f64>()
                    / SPEED_OF_LIGHT
            })
            .collect())
    }
}

/// `d − 1` splices at `k·L/d`, each rotating the fiber by `360/d` degrees.
pub fn cyclic_compensator_plan(
    d: usize,
    total_length_m: f64,
    group_indices: &[f64],
) -> Result<CompensatorPlan> {
    if d < 2 {
        return Err(invalid(format!("compensator needs d >= 2, got {d}")));
    }
    if !(total_length_m > 0.0) {
        return Err(invalid(format!(
            "total length must be positive, got {total_length_m}"
        )));
    }
    if group_indices.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: group_indices.len(),
        });
    }
    Ok(CompensatorPlan {
        dim: d,
        total_length_m,
        splice_positions_m: (1..d)
            .map(|k| k as f64 * total_length_m / d as f64)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{maximally_entangled, purity, DensityMatrix};
    use approx::assert_abs_diff_eq;

    fn anchor_params(bandwidth: f64) -> ChannelParams {
        ChannelParams {
            group_indices: vec![1.4700, 1.4702, 1.47045, 1.47065],
            length_mismatch_m: 0.01,
            bandwidth_fwhm_m: bandwidth,
            ..ChannelParams::ideal(4)
        }
    }

    #[test]
    fn broadband_coherence_anchor() {
        let v = pair_coherence(&anchor_params(150e-9), 0, 3).unwrap();
        assert!((v - 0.565).abs() < 0.005, "V = {v}");
    }

    #[test]
    fn narrowband_coherence_anchor() {
        let v = pair_coherence(&anchor_params(8.3e-9), 0, 3).unwrap();
        assert!(1.0 - v < 0.003, "V = {v}");
    }

    #[test]
    fn zero_mismatch_gives_residual() {
        let mut p = anchor_params(150e-9);
        p.length_mismatch_m = 0.0;
        p.residual_visibility = vec![vec![0.9; 4]; 4];
        for i in 0..4 {
            p.residual_visibility[i][i] = 1.0;
        }
        assert_eq!(pair_coherence(&p, 1, 2).unwrap(), 0.9);
        assert!(pair_coherence(&p, 2, 2).is_err());
    }

    #[test]
    fn identity_channel() {
        let rho = maximally_entangled(4).unwrap().density();
        let out = apply_channel(&rho, &ChannelParams::ideal(4)).unwrap();
        assert!(linalg::max_abs(&(out.matrix() - rho.matrix())) < 1e-14);
    }

    #[test]
    fn crosstalk_lands_on_non_matching_pairs() {
        let rho = maximally_entangled(4).unwrap().density();
        let p = ChannelParams {
            crosstalk_fraction: 0.02,
            ..ChannelParams::ideal(4)
        };
        let out = apply_channel(&rho, &p).unwrap();
        let off: f64 = (0..16)
            .filter(|r| r / 4 != r % 4)
            .map(|r| out.matrix()[(r, r)].re)
            .sum();
        assert_abs_diff_eq!(off, 0.02, epsilon = 1e-14);
    }

    #[test]
    fn rotation_cycles() {
        let r0 = rotation_permutation(0, 4).unwrap();
        assert!(r0.is_identity());
        let r90 = rotation_permutation(90, 4).unwrap();
        assert_eq!(r90.0, vec![1, 2, 3, 0]);
        let r270 = rotation_permutation(270, 4).unwrap();
        assert!(r270.after(&r90).is_identity());
        assert_eq!(r270, r90.inverse());
        let r180 = rotation_permutation(180, 4).unwrap();
        assert_eq!(r180.0, vec![2, 3, 0, 1]);
        assert_eq!(r180, r90.after(&r90));
        let mut acc = CorePermutation::identity(4);
        for _ in 0..4 {
            acc = r90.after(&acc);
        }
        assert!(acc.is_identity());
        assert!(rotation_permutation(45, 4).is_err());
    }

    #[test]
    fn rotated_fiber_loses_correlated_coherence() {
        let rho = maximally_entangled(4).unwrap().density();
        let mut p = anchor_params(150e-9);
        p.rotation_1_deg = 90;
        let out = apply_channel(&rho, &p).unwrap();
        // |0,0⟩ moved to |1,0⟩; coherence with |2,1⟩ is washed out by the
        // differential delay between mismatched cores.
        assert_abs_diff_eq!(out.element(1, 0, 1, 0).re, 0.25, epsilon = 1e-12);
        assert!(
            out.element(1, 0, 2, 1).norm() < 0.01,
            "{}",
            out.element(1, 0, 2, 1).norm()
        );
    }

    #[test]
    fn rejects_unit_mistakes() {
        let mut p = ChannelParams::ideal(4);
        p.center_wavelength_m = 1560.0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = ChannelParams::ideal(4);
        p.bandwidth_fwhm_m = 8.3;
        assert!(p.validate().is_err());
        let mut p = ChannelParams::ideal(4);
        p.crosstalk_fraction = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_non_psd_residuals() {
        let mut p = ChannelParams::ideal(3);
        p.residual_visibility = vec![
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ];
        assert!(p.validate().is_err());
    }

    #[test]
    fn compensator_positions() {
        let plan = cyclic_compensator_plan(4, 100.0, &[1.47; 4]).unwrap();
        assert_eq!(plan.splice_positions_m, vec![25.0, 50.0, 75.0]);
        let plan = cyclic_compensator_plan(2, 10.0, &[1.47; 2]).unwrap();
        assert_eq!(plan.splice_positions_m, vec![5.0]);
        assert!(cyclic_compensator_plan(1, 10.0, &[1.47]).is_err());
        assert!(cyclic_compensator_plan(4, 0.0, &[1.47; 4]).is_err());
    }

    #[test]
    fn compensator_equalizes_delays() {
        let n = [1.4700, 1.4702, 1.47045, 1.47065];
        let plan = cyclic_compensator_plan(4, 100.0, &n).unwrap();
        let delays = plan.per_core_delays(&n).unwrap();
        let expected = (n[0] + n[1] + n[2] + n[3]) * 100.0 / (4.0 * SPEED_OF_LIGHT);
        for t in delays {
            assert!((t - expected).abs() < 1e-20);
        }
    }

    #[test]
    fn dephasing_does_not_raise_purity() {
        let rho = maximally_entangled(4).unwrap().density();
        let mut p = anchor_params(150e-9);
        p.residual_visibility = vec![vec![0.8; 4]; 4];
        for i in 0..4 {
            p.residual_visibility[i][i] = 1.0;
        }
        let out = apply_channel(&rho, &p).unwrap();
        assert!(purity(&out) <= purity(&rho) + 1e-12);
        let mixed = DensityMatrix::maximally_mixed(4).unwrap();
        let out = apply_channel(&mixed, &p).unwrap();
        assert_abs_diff_eq!(purity(&out), purity(&mixed), epsilon = 1e-12);
    }
}
