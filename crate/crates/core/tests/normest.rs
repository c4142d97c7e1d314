mod common;

use pdectl::normest::{self, hinf_norm, HinfOptions};
use pdectl::synth::hinf_with_gradient;
use pdectl::xfer::{CMat, Polynomial, TransferExpr, C};
use pdectl::Error;

#[test]
fn resonance_peaks_are_sandwiched() {
    for theta in [1e-1, 1e-2, 1e-3] {
        for r in common::resonances() {
            let est = hinf_norm(&r.tf(), theta, &HinfOptions::default()).unwrap();
            let peak = r.peak();
            assert!(est.gamma <= peak * (1.0 + 1e-12), "ζ={} ωn={}: {} > {peak}", r.zeta, r.wn, est.gamma);
            assert!(peak <= est.gamma + theta, "ζ={} ωn={}: {peak} vs {}", r.zeta, r.wn, est.gamma);
            assert!(est.tail_certified);
        }
    }
}

#[test]
fn unpolished_sweep_still_meets_the_tolerance() {
    let opts = HinfOptions { polish: false, ..HinfOptions::default() };
    for r in common::resonances() {
        let est = hinf_norm(&r.tf(), 1e-2, &opts).unwrap();
        assert!(r.peak() - est.gamma <= 1e-2 && est.gamma <= r.peak() * (1.0 + 1e-12));
    }
}

#[test]
fn looser_tolerance_uses_fewer_nodes() {
    let t = common::Resonance { zeta: 0.05, wn: 3.0 }.tf();
    let coarse = hinf_norm(&t, 1e-1, &HinfOptions::default()).unwrap().node_count();
    let fine = hinf_norm(&t, 1e-3, &HinfOptions::default()).unwrap().node_count();
    assert!(coarse < fine, "{coarse} vs {fine}");
}

#[test]
fn peak_location_of_a_light_resonance() {
    let r = common::Resonance { zeta: 0.05, wn: 3.0 };
    let est = hinf_norm(&r.tf(), 1e-3, &HinfOptions::default()).unwrap();
    assert_eq!(est.active.len(), 1);
    let want = r.wn * (1.0 - 2.0 * r.zeta * r.zeta).sqrt();
    assert!((est.active[0].omega - want).abs() < 1e-4, "{}", est.active[0].omega);
}

#[test]
fn axis_pole_is_unbounded() {
    let t = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![4.0, 0.0, 1.0])).unwrap();
    assert!(matches!(hinf_norm(&t, 1e-2, &HinfOptions::default()), Err(Error::UnboundedOnAxis { .. })));
}

#[test]
fn matrix_norm_uses_the_top_singular_value() {
    // diag(1/(s+1), 2/(s+2)) peaks at 1 at ω = 0
    let a = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![1.0, 1.0])).unwrap();
    let b = TransferExpr::rational(Polynomial::constant(2.0), Polynomial::new(vec![2.0, 1.0])).unwrap();
    let z = TransferExpr::constant(0.0);
    let t = TransferExpr::block(vec![vec![a.clone(), z.clone()], vec![z, b]]).unwrap();
    let est = hinf_norm(&t, 1e-3, &HinfOptions::default()).unwrap();
    assert!((est.gamma - 1.0).abs() < 1e-3);
    let m = CMat::from_row_slice(2, 2, &[C::new(3.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(1.0, 0.0)]);
    let (s, _, _, gap) = normest::sigma_max(&m);
    assert!((s - 3.0).abs() < 1e-12 && (gap - 2.0).abs() < 1e-12);
}

#[test]
fn subgradient_matches_finite_differences() {
    let opts = HinfOptions::default();
    for (i, case) in common::gradient_cases(20, 99).iter().enumerate() {
        let (_, g) = hinf_with_gradient(&case.channel(&case.x), &common::tunable_lag(), &case.x, 1e-3, &opts).unwrap();
        let f = |x: &[f64]| hinf_norm(&case.channel(x), 1e-3, &opts).unwrap().gamma;
        let err = common::gradient_mismatch(&g, &case.x, &f);
        assert!(err < 1e-3, "case {i}: {err}");
    }
}

#[test]
fn h2_of_a_resonance_matches_the_closed_form() {
    for r in [common::Resonance { zeta: 0.3, wn: 1.0 }, common::Resonance { zeta: 0.7, wn: 5.0 }] {
        let est = normest::h2_integral(&r.tf(), 1e-3, 10.0, None).unwrap();
        let want = std::f64::consts::PI * r.wn / (4.0 * r.zeta);
        assert!((est.value - want).abs() <= 1e-3, "{} vs {want}", est.value);
        assert!(est.tail <= 5e-4);
    }
}

#[test]
fn bode_csv_lists_every_node() {
    let est = hinf_norm(&common::resonances()[4].tf(), 1e-2, &HinfOptions::default()).unwrap();
    let csv = est.bode_csv();
    assert_eq!(csv.lines().next(), Some("omega,sigma_max"));
    assert_eq!(csv.lines().count(), est.node_count() + 1);
}

#[test]
fn nonpositive_tolerance_is_rejected() {
    let t = common::resonances()[0].tf();
    assert!(matches!(hinf_norm(&t, 0.0, &HinfOptions::default()), Err(Error::InvalidParameter(_))));
}
