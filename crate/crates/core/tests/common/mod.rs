//! Independent oracles: a CGLMP evaluation from the joint outcome
//! probability table, and random density matrices.

#![allow(dead_code)]

use std::f64::consts::PI;

use mcf_qudit::linalg::CMatrix;
use mcf_qudit::DensityMatrix;
use num_complex::Complex64;
use rand::Rng;

/// `⟨j|A_a, k⟩` for the CGLMP measurement of party A.
fn a_amp(d: usize, a: usize, k: usize, j: usize) -> Complex64 {
    let alpha = if a == 0 { 0.0 } else { 0.5 };
    Complex64::from_polar(
        1.0 / (d as f64).sqrt(),
        2.0 * PI * j as f64 * (k as f64 + alpha) / d as f64,
    )
}

/// `⟨j|B_b, l⟩` for party B.
fn b_amp(d: usize, b: usize, l: usize, j: usize) -> Complex64 {
    let beta = if b == 0 { 0.25 } else { -0.25 };
    Complex64::from_polar(
        1.0 / (d as f64).sqrt(),
        2.0 * PI * j as f64 * (beta - l as f64) / d as f64,
    )
}

/// `P(A_a = k, B_b = l)` as `⟨ψ_kl|ρ|ψ_kl⟩` with `|ψ_kl⟩ = |A_a,k⟩⊗|B_b,l⟩`.
pub fn joint_probability(rho: &CMatrix, d: usize, a: usize, b: usize, k: usize, l: usize) -> f64 {
    let psi: Vec<Complex64> = (0..d * d)
        .map(|x| a_amp(d, a, k, x / d) * b_amp(d, b, l, x % d))
        .collect();
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..d * d {
        for c in 0..d * d {
            acc += psi[r].conj() * rho[(r, c)] * psi[c];
        }
    }
    acc.re
}

/// `table[a][b][k][l] = P(A_a = k, B_b = l)`.
pub fn probability_table(rho: &CMatrix, d: usize) -> Vec<Vec<Vec<Vec<f64>>>> {
    (0..2)
        .map(|a| {
            (0..2)
                .map(|b| {
                    (0..d)
                        .map(|k| {
                            (0..d)
                                .map(|l| joint_probability(rho, d, a, b, k, l))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// `I_d` summed directly over outcome pairs. `P(X = Y + m)` counts every
/// `(x, y)` with `x − y ≡ m (mod d)`.
pub fn cglmp_from_probabilities(rho: &CMatrix, d: usize) -> f64 {
    let t = probability_table(rho, d);
    let di = d as i64;
    // P(A_a = B_b + m)
    let ab = |a: usize, b: usize, m: i64| -> f64 {
        let mut s = 0.0;
        for x in 0..d {
            for y in 0..d {
                if (x as i64 - y as i64 - m).rem_euclid(di) == 0 {
                    s += t[a][b][x][y];
                }
            }
        }
        s
    };
    // P(B_b = A_a + m)
    let ba = |b: usize, a: usize, m: i64| ab(a, b, -m);
    let mut total = 0.0;
    for k in 0..(d / 2) as i64 {
        let w = 1.0 - 2.0 * k as f64 / (d as f64 - 1.0);
        total += w
            * (ab(0, 0, k) + ba(0, 1, k + 1) + ab(1, 1, k) + ba(1, 0, k)
                - ab(0, 0, -k - 1)
                - ba(0, 1, -k)
                - ab(1, 1, -k - 1)
                - ba(1, 0, -k - 1));
    }
    total
}

/// Random full-rank state `GG†/Tr(GG†)` with Gaussian `G`.
pub fn random_density<R: Rng>(d: usize, rng: &mut R) -> DensityMatrix {
    let n = d * d;
    let mut g = CMatrix::zeros(n, n);
    for x in g.iter_mut() {
        *x = Complex64::new(gauss(rng), gauss(rng));
    }
    DensityMatrix::from_unnormalized(d, &g * g.adjoint()).expect("valid random state")
}

fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().max(1e-300);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}
