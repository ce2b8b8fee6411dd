//! Property tests of invariances and algebraic identities.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use parametric_photon::detection::{sample_heterodyne, Histogram2D, NoiseModel};
use parametric_photon::field::{symmetry_factor, FieldRecord};
use parametric_photon::linalg::{dag, projector, trace, CMatrix};
use parametric_photon::pulse::chirp_track;
use parametric_photon::tomography::{
    apply_chi, mle_state, moment_pairs, mub_states, qpt, state_fidelity, thermal_population, thermal_voltages,
    transfer_estimates, MomentSet,
};
use proptest::prelude::*;

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| C64::new(a, b)), len)
}

/// Random density matrix `A A^dag / Tr`.
fn density(dim: usize) -> impl Strategy<Value = CMatrix> {
    complex_vec(dim * dim).prop_filter_map("degenerate", move |v| {
        let a = CMatrix::from_vec(dim, dim, v);
        let m = &a * dag(&a);
        let t = trace(&m).re;
        (t > 1e-6).then(|| m / C64::new(t, 0.0))
    })
}

fn pure_state(dim: usize) -> impl Strategy<Value = CMatrix> {
    complex_vec(dim).prop_filter_map("zero vector", |v| {
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        (n > 1e-3).then(|| projector(&v.iter().map(|z| z / n).collect::<Vec<_>>()))
    })
}

fn pulse_record(amps: Vec<C64>) -> FieldRecord {
    let power = amps.iter().map(|a| a.norm_sqr()).collect();
    FieldRecord::new(0.0, 1e-9, amps, power).unwrap()
}

fn pulse_shape() -> impl Strategy<Value = Vec<C64>> {
    complex_vec(40).prop_filter("empty pulse", |v| v.iter().any(|z| z.norm() > 1e-2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symmetry_factor_is_bounded(amps in pulse_shape()) {
        let s = symmetry_factor(&pulse_record(amps)).unwrap().s;
        prop_assert!((0.0..=1.0 + 1e-9).contains(&s));
    }

    #[test]
    fn symmetry_factor_ignores_global_phase_and_scale(amps in pulse_shape(), phase in 0.0..2.0 * PI, scale in 0.1..10.0f64) {
        let a = symmetry_factor(&pulse_record(amps.clone())).unwrap().s;
        let z = C64::from_polar(scale, phase);
        let b = symmetry_factor(&pulse_record(amps.iter().map(|x| x * z).collect())).unwrap().s;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn symmetry_factor_ignores_time_shift_and_reversal(amps in pulse_shape(), pad in 0usize..20) {
        let base = pulse_record(amps.clone());
        let a = symmetry_factor(&base).unwrap().s;
        let mut shifted = vec![C64::new(0.0, 0.0); pad];
        shifted.extend(amps);
        let b = symmetry_factor(&pulse_record(shifted)).unwrap().s;
        let c = symmetry_factor(&base.time_reversed()).unwrap().s;
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((a - c).abs() < 1e-9);
    }

    #[test]
    fn symmetric_real_pulse_has_unit_symmetry(half in prop::collection::vec(0.01..1.0f64, 1..30)) {
        let amps: Vec<C64> = half.iter().chain(half.iter().rev()).map(|&x| C64::new(x, 0.0)).collect();
        let s = symmetry_factor(&pulse_record(amps)).unwrap().s;
        prop_assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn chirp_of_symmetric_envelope_is_antisymmetric(
        half in prop::collection::vec(0.0..0.05f64, 2..40),
        theta0 in -PI..PI,
        k in -1e8..1e8f64,
    ) {
        let env: Vec<f64> = half.iter().chain(half.iter().rev()).copied().collect();
        let theta = chirp_track(&env, 0.5e-9, |a| k * a * a, theta0);
        let n = theta.len();
        let total = theta[n - 1] - theta0;
        for i in 0..n {
            let sum = (theta[i] - theta0) + (theta[n - 1 - i] - theta0);
            prop_assert!((sum - total).abs() <= 1e-9 * (1.0 + total.abs()));
        }
    }

    #[test]
    fn histogram_merge_is_commutative_and_associative(
        a in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..50),
        b in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..50),
        c in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 0..50),
    ) {
        let fill = |pts: &[(f64, f64)]| {
            let mut h = Histogram2D::uniform(11, 4.0, 1.0, 1.0, 7).unwrap();
            for &(x, y) in pts {
                h.add(C64::new(x, y));
            }
            h
        };
        let (ha, hb, hc) = (fill(&a), fill(&b), fill(&c));
        prop_assert_eq!(ha.merge(&hb).unwrap(), hb.merge(&ha).unwrap());
        prop_assert_eq!(ha.merge(&hb).unwrap().merge(&hc).unwrap(), ha.merge(&hb.merge(&hc).unwrap()).unwrap());
        let all: Vec<_> = a.iter().chain(&b).chain(&c).copied().collect();
        prop_assert_eq!(ha.merge(&hb).unwrap().merge(&hc).unwrap(), fill(&all));
    }

    #[test]
    fn state_moments_are_hermitian(rho in density(4)) {
        let m = MomentSet::from_state(&rho);
        for (n, k) in moment_pairs() {
            prop_assert!((m.get(n, k) - m.get(k, n).conj()).norm() < 1e-12);
        }
        prop_assert!(m.get(1, 1).re >= -1e-12);
    }

    #[test]
    fn mle_recovers_state_from_exact_moments(rho in pure_state(2)) {
        let mut m = MomentSet::from_state(&rho);
        m.errors = vec![1e-3; m.values.len()];
        let est = mle_state(&m, 2).unwrap();
        prop_assert!(state_fidelity(&est.rho, &rho).unwrap() > 0.999);
    }

    #[test]
    fn qpt_resynthesizes_channel(
        k0 in complex_vec(4),
        k1 in complex_vec(4),
        probe in density(2),
    ) {
        // Normalise Kraus operators so that sum K^dag K = I.
        let a0 = CMatrix::from_vec(2, 2, k0);
        let a1 = CMatrix::from_vec(2, 2, k1);
        let s = dag(&a0) * &a0 + dag(&a1) * &a1;
        let (vals, vecs) = parametric_photon::linalg::eigh(&s);
        prop_assume!(vals[0] > 1e-3);
        let inv_sqrt = parametric_photon::linalg::spectral_map(&vals, &vecs, |x| x.powf(-0.5));
        let kraus = [&a0 * &inv_sqrt, &a1 * &inv_sqrt];
        let channel = |r: &CMatrix| kraus.iter().map(|k| k * r * dag(k)).fold(CMatrix::zeros(2, 2), |acc, x| acc + x);
        let inputs = mub_states();
        let outputs: Vec<CMatrix> = inputs.iter().map(channel).collect();
        let chi = qpt(&inputs, &outputs).unwrap();
        prop_assert!((apply_chi(&chi.chi, &probe) - channel(&probe)).norm() < 1e-8);
    }

    #[test]
    fn thermal_routes_agree(
        pe in 0.0..0.5f64,
        vg in (-1.0..1.0f64, -1.0..1.0f64),
        ve in (-1.0..1.0f64, -1.0..1.0f64),
        vf in (-1.0..1.0f64, -1.0..1.0f64),
    ) {
        let c = |p: (f64, f64)| C64::new(p.0, p.1);
        let (g, e, f) = (c(vg), c(ve), c(vf));
        let area = ((e - g).conj() * (f - g)).im;
        prop_assume!(area.abs() > 1e-2 && (0.5 - pe) > 1e-2);
        let r = thermal_population(thermal_voltages(pe, g, e, f)).unwrap();
        prop_assert!((r.pe_eta - pe).abs() < 1e-8);
        prop_assert!((r.pe_lambda - pe).abs() < 1e-8);
    }

    #[test]
    fn transfer_estimates_are_monotone(f1 in 0.0..1.0f64, loss in 0.0..1.0f64, d in 0.0..0.1f64) {
        let base = transfer_estimates(f1, loss).unwrap();
        let better = transfer_estimates((f1 + d).min(1.0), loss).unwrap();
        let lossier = transfer_estimates(f1, (loss + d).min(1.0)).unwrap();
        prop_assert!(better.f_chi >= base.f_chi && lossier.f_chi <= base.f_chi);
        prop_assert!((0.25..=1.0).contains(&base.f_chi));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampling_is_reproducible_per_seed(seed in 0u64..1000, rho in density(2)) {
        let noise = NoiseModel::new(1.0, 1.0, seed);
        let a = sample_heterodyne(&rho, &noise, 20_000).unwrap();
        let b = sample_heterodyne(&rho, &noise, 20_000).unwrap();
        prop_assert_eq!(a.counts.iter().sum::<u64>() + a.out_of_range, 20_000);
        prop_assert_eq!(a, b);
    }
}
