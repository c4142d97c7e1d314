use pdectl::normest::{hinf_norm, HinfOptions};
use pdectl::nyquist::winding_number;
use pdectl::sim::Realization;
use pdectl::synth::cone_constraint;
use pdectl::xfer::{Polynomial, QuasiPolynomial, TransferExpr, C};
use proptest::prelude::*;

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 1..=n)
}

fn point() -> impl Strategy<Value = C> {
    (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b)| C::new(a, b))
}

/// Stable first-order section `b/(s + a)`.
fn lag() -> impl Strategy<Value = (f64, f64)> {
    (0.2..5.0f64, 0.1..4.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_evaluates_to_product(a in coeffs(5), b in coeffs(5), s in point()) {
        let (p, q) = (Polynomial::new(a), Polynomial::new(b));
        let lhs = (&p * &q).eval(s);
        let rhs = p.eval(s) * q.eval(s);
        prop_assert!((lhs - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
    }

    #[test]
    fn quasi_derivative_matches_differences(a in coeffs(4), b in coeffs(4), tau in 0.0..2.0f64, s in point()) {
        let p = QuasiPolynomial::new(vec![(Polynomial::new(a), 0.0), (Polynomial::new(b), tau)]);
        let h = 1e-6;
        let fd = (p.eval(s + h) - p.eval(s - h)) / (2.0 * h);
        let (_, d) = p.eval_with_deriv(s);
        prop_assert!((fd - d).norm() <= 1e-5 * (1.0 + d.norm()));
    }

    #[test]
    fn circles_wind_once_around_inner_points(c in point(), r in 0.5..3.0f64, n in 8usize..64, seed in 0u64..1000) {
        let pts: Vec<C> = (0..n).map(|k| c + C::from_polar(r, std::f64::consts::TAU * k as f64 / n as f64)).collect();
        let inner = c.norm() < 0.9 * r * (std::f64::consts::PI / n as f64).cos();
        let outer = c.norm() > 1.1 * r;
        prop_assume!(inner || outer);
        let w = winding_number(&pts, seed).unwrap();
        prop_assert_eq!(w, if inner { 1 } else { 0 });
        let rev: Vec<C> = pts.iter().rev().copied().collect();
        prop_assert_eq!(winding_number(&rev, seed).unwrap(), -w);
    }

    #[test]
    fn scalar_feedback_is_the_loop_formula((a, b) in lag(), k in -3.0..3.0f64, s in point()) {
        let g = TransferExpr::rational(Polynomial::constant(b), Polynomial::new(vec![a, 1.0])).unwrap();
        let fb = TransferExpr::feedback(&g, &TransferExpr::constant(k), 1.0).unwrap();
        let gv = g.eval_scalar(s).unwrap();
        let want = gv / (1.0 + k * gv);
        prop_assume!((1.0 + k * gv).norm() > 1e-3);
        prop_assert!((fb.eval_scalar(s).unwrap() - want).norm() <= 1e-10 * (1.0 + want.norm()));
    }

    #[test]
    fn hinf_of_a_lag_is_its_dc_gain((a, b) in lag(), c in 0.1..10.0f64) {
        let g = TransferExpr::rational(Polynomial::constant(b), Polynomial::new(vec![a, 1.0])).unwrap();
        let est = hinf_norm(&g.scale(c), 1e-3, &HinfOptions::default()).unwrap();
        let want = c * b / a;
        prop_assert!(est.gamma <= want * (1.0 + 1e-12) && want <= est.gamma + 1e-3);
    }

    #[test]
    fn realization_reproduces_the_controller(den in prop::collection::vec(0.5..4.0f64, 2), num in coeffs(3), w in 0.01..20.0f64) {
        let d = Polynomial::new(vec![den[0] * den[1], den[0] + den[1], 1.0]);
        let k = TransferExpr::rational(Polynomial::new(num), d).unwrap();
        let r = Realization::new(&k, 0.01).unwrap();
        let s = C::new(0.0, w);
        let got = r.frequency_response(s).unwrap()[0];
        let want = k.eval_scalar(s).unwrap();
        prop_assert!((got - want).norm() <= 1e-9 * (1.0 + want.norm()));
    }

    #[test]
    fn cone_residuals_are_hinges(vals in prop::collection::vec(point(), 1..40), alpha in 0.1..2.0f64, r in 0.0..1.0f64) {
        let (res, worst) = cone_constraint(&vals, alpha, r);
        prop_assert!(res.iter().all(|&v| v >= 0.0 && v <= worst));
        for (z, v) in vals.iter().zip(&res) {
            if z.re >= r {
                prop_assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn merged_difference_has_the_same_values(
        (a1, b1) in lag(), (a2, b2) in lag(), g in -2.0..2.0f64, tau in 0.1..2.0f64, w in 0.0..50.0f64,
    ) {
        let lag = |a: f64, b: f64| TransferExpr::rational(Polynomial::constant(b), Polynomial::new(vec![a, 1.0])).unwrap();
        let k = TransferExpr::hstack(vec![lag(a1, b1).add(&TransferExpr::delay(tau).unwrap()).unwrap(), TransferExpr::constant(g)]).unwrap();
        let k0 = TransferExpr::hstack(vec![lag(a2, b2), TransferExpr::constant(1.0)]).unwrap();
        let s = C::new(0.0, w);
        let want = k.sub(&k0).unwrap().eval(s).unwrap();
        let got = k.sub_merged(&k0).unwrap().eval(s).unwrap();
        prop_assert!((got - &want).norm() <= 1e-9 * (1.0 + want.norm()));
    }

    #[test]
    fn tail_bounds_dominate_sampled_gains(
        lags in prop::collection::vec(lag(), 3), gains in prop::collection::vec(-0.3..0.3f64, 3), omega in 1.0..20.0f64,
    ) {
        // feedback of a lag column with a small static row, then a row times that column
        let col = TransferExpr::vstack(
            lags.iter().map(|&(a, b)| TransferExpr::rational(Polynomial::constant(b), Polynomial::new(vec![a, 1.0])).unwrap()).collect(),
        ).unwrap();
        let row = TransferExpr::gain(1, 3, gains.clone()).unwrap();
        let loop_ = TransferExpr::feedback(&col, &row, 1.0).unwrap();
        let t = row.add(&TransferExpr::gain(1, 3, vec![0.5, -0.5, 0.2]).unwrap()).unwrap().mul(&loop_).unwrap();
        for e in [&loop_, &t] {
            let b = e.high_frequency_bound(omega);
            let eb = e.entry_bounds(omega);
            for k in 0..40 {
                let nu = omega * (1.0 + 0.37 * k as f64);
                let v = e.eval(C::new(0.0, nu)).unwrap();
                if let Some(b) = b {
                    prop_assert!(v.norm() <= b * (1.0 + 1e-12), "{} > {b} at {nu}", v.norm());
                }
                if let Some(eb) = &eb {
                    for (z, m) in v.iter().zip(eb.iter()) {
                        prop_assert!(z.norm() <= m * (1.0 + 1e-12));
                    }
                }
            }
        }
    }
}
