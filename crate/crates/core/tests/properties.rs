use mcf_qudit::bell::{
    cglmp_context, cglmp_value, core_pairs, subspace_concurrence, MetricSet, CGLMP_LOCAL_BOUND,
};
use mcf_qudit::channel::{apply_channel, ChannelParams};
use mcf_qudit::linalg::{self, CMatrix, CVector};
use mcf_qudit::measurement::EfficiencyModel;
use mcf_qudit::qstate::{
    maximally_entangled, purity, rephase, schmidt_decomposition, schmidt_number, PureState,
};
use mcf_qudit::tomography::{
    bootstrap_data, linear_inversion_data, standard_settings, MleOptions, TomographyData,
};
use mcf_qudit::DensityMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(re, im)| Complex64::new(re, im))
            .collect()
    })
}

fn pure_state(d: usize) -> impl Strategy<Value = PureState> {
    complex_vec(d * d)
        .prop_filter("non-zero", |v| {
            v.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1e-3
        })
        .prop_map(move |v| {
            let psi = CVector::from_vec(v);
            let n = psi.norm();
            PureState::new(d, psi.unscale(n)).unwrap()
        })
}

/// `GG†/Tr` for a random rank-`r` factor `G`.
fn density(d: usize, rank: usize) -> impl Strategy<Value = DensityMatrix> {
    complex_vec(d * d * rank).prop_map(move |v| {
        let g = CMatrix::from_vec(d * d, rank, v);
        DensityMatrix::from_unnormalized(d, &g * g.adjoint()).unwrap()
    })
}

fn product_state(d: usize) -> impl Strategy<Value = DensityMatrix> {
    (complex_vec(d), complex_vec(d))
        .prop_filter("non-zero", |(a, b)| {
            a.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1e-3
                && b.iter().map(|c| c.norm_sqr()).sum::<f64>() > 1e-3
        })
        .prop_map(move |(a, b)| {
            let v = linalg::kron_vec(&CVector::from_vec(a), &CVector::from_vec(b));
            DensityMatrix::from_unnormalized(d, linalg::outer(&v)).unwrap()
        })
}

/// Residual visibilities as a Hadamard square of a unit-diagonal Gram matrix,
/// which keeps their element-wise square root PSD.
fn residual_visibility(d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(0.0..1.0f64, d * d).prop_map(move |x| {
        let g = nalgebra::DMatrix::from_vec(d, d, x);
        let cols: Vec<_> = (0..d).map(|k| g.column(k).normalize()).collect();
        (0..d)
            .map(|i| (0..d).map(|j| cols[i].dot(&cols[j]).powi(2)).collect())
            .collect()
    })
}

fn channel_params() -> impl Strategy<Value = ChannelParams> {
    (
        prop::collection::vec(1.46..1.48f64, 4),
        -0.02..0.02f64,
        1e-9..200e-9f64,
        0.0..0.2f64,
        residual_visibility(4),
        prop::collection::vec(-3.2..3.2f64, 4),
        0..4i32,
    )
        .prop_map(|(n, dl, bw, eps, v, phases, rot)| ChannelParams {
            group_indices: n,
            length_mismatch_m: dl,
            bandwidth_fwhm_m: bw,
            crosstalk_fraction: eps,
            residual_visibility: v,
            phase_biases_rad: phases,
            rotation_1_deg: 90 * rot,
            ..ChannelParams::ideal(4)
        })
}

fn permutation(d: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..d).collect::<Vec<_>>()).prop_shuffle()
}

fn permutation_matrix(map: &[usize]) -> CMatrix {
    let d = map.len();
    let mut p = CMatrix::zeros(d, d);
    for (k, &m) in map.iter().enumerate() {
        p[(m, k)] = linalg::ONE;
    }
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn channel_output_is_a_state(rho in density(4, 3), params in channel_params()) {
        prop_assume!(params.validate().is_ok());
        let out = apply_channel(&rho, &params).unwrap();
        prop_assert!((linalg::trace(out.matrix()).re - 1.0).abs() < 1e-10);
        let min = out.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(min > -1e-9, "min eigenvalue {min}");
    }

    #[test]
    fn rephase_is_idempotent_and_local(rho in density(4, 2)) {
        let once = rephase(&rho);
        let twice = rephase(&once);
        prop_assert!(linalg::max_abs(&(once.matrix() - twice.matrix())) < 1e-10);
        prop_assert!((purity(&once) - purity(&rho)).abs() < 1e-10);
        prop_assert!((schmidt_number(&once) - schmidt_number(&rho)).abs() < 1e-9);
        for (i, j) in core_pairs(4) {
            let a = subspace_concurrence(&rho, i, j).unwrap();
            let b = subspace_concurrence(&once, i, j).unwrap();
            // Square roots of rounding-level eigenvalues of a rank-deficient
            // block limit agreement to about 1e-8.
            prop_assert!((a - b).abs() < 1e-7, "pair ({i},{j}): {a} vs {b}");
        }
        for k in 1..4 {
            let z = once.element(0, 0, k, k);
            prop_assert!(z.im.abs() < 1e-10 && z.re >= -1e-12);
        }
    }

    #[test]
    fn cglmp_is_linear(a in density(3, 9), b in density(3, 1), w in 0.0..1.0f64) {
        let ctx = cglmp_context(3).unwrap();
        let mixed = a.mix(&b, w).unwrap();
        let lhs = cglmp_value(&mixed, &ctx).unwrap();
        let rhs = w * cglmp_value(&a, &ctx).unwrap() + (1.0 - w) * cglmp_value(&b, &ctx).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn schmidt_decomposition_recomposes(psi in pure_state(4)) {
        let s = schmidt_decomposition(&psi);
        let mut back = CVector::zeros(16);
        for k in 0..4 {
            back += linalg::kron_vec(&s.left[k], &s.right[k]).scale(s.coefficients[k]);
        }
        prop_assert!((back - psi.amplitudes()).norm() < 1e-10);
        prop_assert!(s.coefficients.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!((s.schmidt_number() - schmidt_number(&psi.density())).abs() < 1e-9);
    }

    #[test]
    fn product_states_are_local(rho in product_state(4)) {
        for (i, j) in core_pairs(4) {
            prop_assert!(subspace_concurrence(&rho, i, j).unwrap() < 1e-7);
        }
        let ctx = cglmp_context(4).unwrap();
        prop_assert!(cglmp_value(&rho, &ctx).unwrap() <= CGLMP_LOCAL_BOUND + 1e-9);
        prop_assert!((schmidt_number(&rho) - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    /// Counts of `ρ` read through a relabeled protocol reconstruct `PρP†`.
    #[test]
    fn tomography_is_relabel_equivariant(rho in density(4, 2), map in permutation(4)) {
        let protocol = standard_settings(4).unwrap();
        let eff = EfficiencyModel::Ideal;
        let data = TomographyData::exact(&rho, &protocol, &eff).unwrap();
        let relabeled = TomographyData::new(&protocol.relabeled(&map), &eff, data.counts().to_vec()).unwrap();
        let got = linear_inversion_data(&relabeled).unwrap();
        let p = permutation_matrix(&map);
        let pp = linalg::kron(&p, &p);
        let want = &pp * rho.matrix() * pp.adjoint();
        prop_assert!(linalg::max_abs(&(got - want)) < 1e-9);
    }
}

/// Doubling every count shrinks the spread by `1/√2` for a state well inside
/// the PSD cone, where the positivity constraint is inactive.
#[test]
fn bootstrap_spread_scales_with_counts() {
    let beta = maximally_entangled(4).unwrap().density();
    let rho = beta
        .mix(&DensityMatrix::maximally_mixed(4).unwrap(), 0.5)
        .unwrap();
    let protocol = standard_settings(4).unwrap();
    let eff = EfficiencyModel::Ideal;
    let exact = TomographyData::exact(&rho, &protocol, &eff).unwrap();
    let metrics = MetricSet::new(maximally_entangled(4).unwrap()).unwrap();
    let opts = MleOptions::default();
    let spread = |flux: f64| {
        let data = exact
            .with_counts(exact.counts().iter().map(|c| c * flux).collect())
            .unwrap();
        bootstrap_data(&data, &metrics, 200, 17, &opts)
            .unwrap()
            .get("I4")
            .unwrap()
            .1
    };
    let ratio = spread(2e6) / spread(1e6);
    assert!(
        (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.05,
        "σ ratio {ratio}"
    );
}
