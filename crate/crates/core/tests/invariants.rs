//! Property tests for the structural invariants of the library.

use hermite_lab::acceptance::Tier;
use hermite_lab::grid_cache::default_basis;
use hermite_lab::hermite_basis::{analyze, synthesize};
use hermite_lab::lens_free::{inverse_lens_time, lens_time};
use hermite_lab::picard_solver::{cumulative_from_center, PicardState, SolverConfig};
use hermite_lab::proba_lab::{b2p_brute_force, b2p_closed_form, m_gamma, smoothstep_cutoff};
use hermite_lab::random_ensembles::{randomize, EnsembleSpec, Family};
use hermite_lab::spectral_ops::{fourier_transform, harmonic_sobolev_norm, inverse_fourier_transform, propagate_linear};
use hermite_lab::stats::wilson_interval;
use hermite_lab::SpectralField;
use num_complex::Complex64;
use proptest::prelude::*;

fn field(n: usize, re: &[f64], im: &[f64]) -> SpectralField {
    let basis = default_basis(1, n).unwrap();
    let c = (0..=n).map(|k| Complex64::new(re[k], im[k])).collect();
    SpectralField::new(basis, c).unwrap()
}

fn coeffs(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(-1.0f64..1.0, n + 1),
        prop::collection::vec(-1.0f64..1.0, n + 1),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear_flow_is_a_unitary_group((re, im) in coeffs(12), t in -3.0f64..3.0, s in -3.0f64..3.0) {
        let u = field(12, &re, &im);
        let a = propagate_linear(&propagate_linear(&u, t), s);
        let b = propagate_linear(&u, t + s);
        prop_assert!(a.sub(&b).unwrap().l2_norm() <= 1e-12 * (1.0 + u.l2_norm()));
        prop_assert!((propagate_linear(&u, t).l2_norm() - u.l2_norm()).abs() <= 1e-13);
    }

    #[test]
    fn fourier_transform_is_isometric_with_period_four((re, im) in coeffs(10)) {
        let u = field(10, &re, &im);
        let f = fourier_transform(&u);
        prop_assert!((f.l2_norm() - u.l2_norm()).abs() <= 1e-13);
        let back = inverse_fourier_transform(&f);
        prop_assert!(back.sub(&u).unwrap().l2_norm() <= 1e-14);
        let f4 = fourier_transform(&fourier_transform(&fourier_transform(&f)));
        prop_assert!(f4.sub(&u).unwrap().l2_norm() <= 1e-13);
    }

    #[test]
    fn harmonic_norm_is_homogeneous_and_monotone((re, im) in coeffs(9), a in -4.0f64..4.0, s in 0.0f64..2.0) {
        let u = field(9, &re, &im);
        let n = harmonic_sobolev_norm(&u, s);
        prop_assert!((harmonic_sobolev_norm(&u.scaled(a), s) - a.abs() * n).abs() <= 1e-12 * (1.0 + n));
        prop_assert!(harmonic_sobolev_norm(&u, s + 0.5) >= n);
    }

    #[test]
    fn synthesis_and_analysis_invert((re, im) in coeffs(15)) {
        let u = field(15, &re, &im);
        let v = analyze(&synthesize(&u), u.basis()).unwrap();
        prop_assert!(v.sub(&u).unwrap().l2_norm() <= 1e-12);
    }

    #[test]
    fn randomization_is_homogeneous_per_draw((re, im) in coeffs(8), k in -3i32..4, omega in 0u64..1000, seed in 0u64..50) {
        let u = field(8, &re, &im);
        prop_assume!(!u.is_zero());
        let spec = EnsembleSpec::gaussian(seed);
        let scale = 2f64.powi(k);
        let a = randomize(&u.scaled(scale), &spec, omega).unwrap().draw;
        let b = randomize(&u, &spec, omega).unwrap().draw.scaled(scale);
        prop_assert_eq!(a.coeffs(), b.coeffs());
    }

    #[test]
    fn draws_are_keyed(seed in 0u64..1000, i in 0u64..100_000, n in 0u64..512, fam in 0usize..5) {
        let family = Family::ALL[fam];
        let gamma = (family == Family::SymmetricWeibull).then_some(1.5);
        let a = EnsembleSpec::new(family, gamma, seed).unwrap().sampler();
        let b = EnsembleSpec::new(family, gamma, seed).unwrap().sampler();
        prop_assert_eq!(a.draw(i, n).to_bits(), b.draw(i, n).to_bits());
        if let Some(bound) = family.support_bound() {
            prop_assert!(a.draw(i, n).abs() <= bound);
        }
    }

    #[test]
    fn cumulative_rule_is_exact_on_cubics(
        c in prop::array::uniform4(-2.0f64..2.0),
        half in 2usize..30,
        h in 0.01f64..0.2,
    ) {
        let m = 2 * half + 1;
        let poly = |t: f64| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        let prim = |t: f64| t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)));
        let g: Vec<Vec<Complex64>> = (0..m)
            .map(|k| vec![Complex64::new(poly((k as f64 - half as f64) * h), 0.0)])
            .collect();
        let out = cumulative_from_center(&g, h);
        for (k, v) in out.iter().enumerate() {
            let t = (k as f64 - half as f64) * h;
            prop_assert!((v[0].re - prim(t)).abs() <= 1e-12, "k = {}", k);
        }
    }

    #[test]
    fn lens_time_inverts(t in -50.0f64..50.0) {
        let s = lens_time(t);
        prop_assert!(s.abs() < std::f64::consts::FRAC_PI_4);
        prop_assert!((inverse_lens_time(s).unwrap() - t).abs() <= 1e-12 * (1.0 + t * t));
    }

    #[test]
    fn cutoff_is_monotone_between_one_and_two(x in 0.0f64..3.0, dx in 0.0f64..1.0) {
        let (a, b) = (smoothstep_cutoff(x), smoothstep_cutoff(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
        prop_assert_eq!(smoothstep_cutoff(-x), a);
    }

    #[test]
    fn m_gamma_is_at_most_gamma(gamma in 0.05f64..=2.0) {
        let spec = EnsembleSpec::weibull(gamma, 0).unwrap();
        let m = m_gamma(gamma, &spec.flags).unwrap();
        prop_assert!(m > 0.0 && m <= gamma + 1e-15);
    }

    #[test]
    fn wilson_interval_brackets_the_proportion(n in 1usize..10_000, frac in 0.0f64..=1.0) {
        let k = ((n as f64) * frac).round() as usize;
        let (lo, hi) = wilson_interval(k, n, 3.0);
        let p = k as f64 / n as f64;
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
        prop_assert!(lo >= 0.0 && hi <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn checkpoint_round_trip_is_exact(amp in 0.01f64..0.3, k in prop::sample::select(vec![1, -1])) {
        let cfg = SolverConfig { k_sign: k, max_degree: 8, time_nodes: 33, ..Default::default() };
        let basis = default_basis(1, 8).unwrap();
        let u0 = SpectralField::unit(basis, 0).scaled(amp);
        let mut st = PicardState::new(&u0, &cfg).unwrap();
        st.step().unwrap();
        let mut buf = Vec::new();
        st.save(&mut buf).unwrap();
        let back = PicardState::load(buf.as_slice()).unwrap();
        let mut again = Vec::new();
        back.save(&mut again).unwrap();
        prop_assert_eq!(buf, again);
    }
}

#[test]
fn pairing_counts_agree_with_enumeration() {
    let expected = [1u64, 3, 55, 1225];
    for p in 1..=4u32 {
        let brute = b2p_brute_force(p).unwrap();
        assert_eq!(brute, expected[p as usize - 1]);
        assert_eq!(b2p_closed_form(p).unwrap(), brute.into());
    }
}

#[test]
fn tier_names_round_trip() {
    for t in [Tier::Smoke, Tier::Reference, Tier::Extended] {
        assert_eq!(t.name().parse::<Tier>().unwrap(), t);
    }
    assert!("quick".parse::<Tier>().is_err());
}
