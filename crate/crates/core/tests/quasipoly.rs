use std::f64::consts::{LN_2, PI};

use pdectl::plants::{self, WavePlant};
use pdectl::quasipoly::*;
use pdectl::xfer::{Polynomial, QuasiPolynomial, TransferExpr, C};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn polynomial_counts_match_known_roots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rect = Rect::new(-1.0, 2.0, -1.5, 2.5);
    for _ in 0..20 {
        let roots: Vec<C> = (0..rng.random_range(1..6))
            .flat_map(|_| {
                let z = C::new(rng.random_range(-3.0..3.0), rng.random_range(0.0..3.0));
                if rng.random_bool(0.5) { vec![C::new(z.re, 0.0)] } else { vec![z, z.conj()] }
            })
            .collect();
        // keep roots clear of the contour
        if roots.iter().any(|z| {
            (z.re - rect.re.0).abs() < 0.05
                || (z.re - rect.re.1).abs() < 0.05
                || (z.im - rect.im.0).abs() < 0.05
                || (z.im - rect.im.1).abs() < 0.05
        }) {
            continue;
        }
        let p: QuasiPolynomial = Polynomial::from_roots(&roots).into();
        let want = roots.iter().filter(|z| rect.contains(**z)).count() as i64;
        assert_eq!(count_zeros(&p, rect).unwrap().count, want, "{roots:?}");
    }
}

#[test]
fn anti_damped_chain_has_one_zero_per_strip() {
    // 1 − Qe^{−2s} with Q = −2 vanishes at ln2/2 + j(k + ½)π; 1 + Qe^{−2s} at ln2/2 + jkπ
    let w = WavePlant::new(3.0).unwrap();
    for k in 0..3 {
        let c = k as f64 * PI;
        let (count, z) = isolate_zero(&w.zero_quasi(), Rect::new(0.0, 1.0, c - 0.5, c + 0.5)).unwrap();
        assert_eq!(count.count, 1);
        let z = z.unwrap();
        assert!((z.re - LN_2 / 2.0).abs() < 1e-6 && (z.im - c).abs() < 1e-6, "{z}");
        let (count, z) = isolate_zero(&w.chain_quasi(), Rect::new(0.0, 1.0, c + 0.5 * PI - 0.5, c + 0.5 * PI + 0.5)).unwrap();
        assert_eq!(count.count, 1);
        assert!((z.unwrap().re - w.chain_real_part()).abs() < 1e-9);
    }
}

#[test]
fn crossing_margin_matches_the_sweep() {
    for (x1, x2, x3) in [(1.0, 0.5, 0.2), (0.5, 1.0, 0.3), (2.0, 0.3, 1.0), (1.0, 0.0, 0.5)] {
        let h = h_sigma0(x1, x2, x3).unwrap();
        assert!(h.is_finite() && h > 0.0);
        let p = DelayMarginProblem::new(x1, x2, x3);
        let (lo, hi) = delay_sweep(&p, 4.0 * h, 0.05 * h, 1e-6).unwrap().expect("destabilizes");
        assert!(lo <= h * (1.0 + 1e-3) && hi >= h * (1.0 - 1e-3), "{x1},{x2},{x3}: {h} in [{lo}, {hi}]");
    }
}

#[test]
fn margin_is_zero_without_delay_free_stability() {
    assert_eq!(h_sigma0(1.0, -1.0, -1.0 / 64.0).unwrap(), 0.0);
    let p = DelayMarginProblem::new(1.0, -1.0, -1.0 / 64.0);
    assert_eq!(delay_sweep(&p, 2.0, 0.1, 1e-6).unwrap(), Some((0.0, 0.0)));
    assert!(rhp_zeros_at_delay(&p, 0.0).unwrap() > 0);
}

#[test]
fn recipe_and_crossing_agree_in_form() {
    // both read a delay off the argument of −B/A at a positive frequency
    let h = h_sigma0_recipe(1.0, 0.5, 0.2).unwrap();
    assert!(h.is_finite() && h > 0.0);
    assert!(omega_sigma(1.0).unwrap() > 0.0);
    assert!(!crossing_frequencies(1.0, 0.5, 0.2).is_empty());
}

#[test]
fn ad_hoc_wave_controller_is_a_stabilizer() {
    for q in [2.0, 3.0, 4.0] {
        let d = Polynomial::new(vec![1.0, 1.0]);
        let n3 = d.clone();
        let n1 = Polynomial::new(vec![1.0 / 64.0, 1.0]).scale(1.0 - q);
        assert!(check_ad_hoc_stabilizer(&d, &n3, &n1, q).unwrap(), "q={q}");
    }
}

#[test]
fn fixture_denominators_have_no_rhp_zeros() {
    for name in ["parabolic_initial", "parabolic_matched", "wave_adhoc", "wave_fd", "wave_small_gain"] {
        for d in plants::fixture_denominators(name) {
            assert_eq!(rhp_count(&d).unwrap().count, 0, "{name}");
        }
    }
}

#[test]
fn rational_count_is_zeros_minus_poles() {
    // (s − 1)(s − 2)/(s − 0.5)
    let f = TransferExpr::rational(Polynomial::new(vec![2.0, -3.0, 1.0]), Polynomial::new(vec![-0.5, 1.0])).unwrap();
    assert_eq!(count_zeros_expr(&f, Rect::new(0.2, 3.0, -1.0, 1.0)).unwrap().count, 1);
    assert_eq!(count_zeros_expr(&f, Rect::new(0.7, 3.0, -1.0, 1.0)).unwrap().count, 2);
}

#[test]
fn retarded_quasi_polynomial_ladder() {
    // s + e^{−s} is stable; s − 1.5 + e^{−2s} is not
    let stable = QuasiPolynomial::new(vec![(Polynomial::s(), 0.0), (Polynomial::one(), 1.0)]);
    assert_eq!(rhp_count(&stable).unwrap().count, 0);
    let unstable = QuasiPolynomial::new(vec![(Polynomial::new(vec![-1.5, 1.0]), 0.0), (Polynomial::one(), 2.0)]);
    assert!(rhp_count(&unstable).unwrap().count > 0);
}
