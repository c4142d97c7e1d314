//! Closed-form irrational scalar transfer functions with hand-derived derivatives.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

type C = Complex64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "closure", rename_all = "snake_case")]
pub enum Analytic {
    /// `e^{-D s} sinh(r ξ) / sinh(r L)` with `r = √(s − c)`: boundary-controlled
    /// reaction-diffusion on `[0, L]`, observed at `ξ`.
    ParabolicSensor { length: f64, delay: f64, reaction: f64, xi: f64 },
    /// `(1 − e^{-θ s}) / s`, entire.
    DelayDifference { theta: f64 },
}

/// `sinh(√w)/√w` as a power series in `w`, and its derivative in `w`.
fn sinhc_series(w: C) -> (C, C) {
    // 1/(2k+1)! for k = 0..6
    const K: [f64; 7] = [
        1.0,
        1.0 / 6.0,
        1.0 / 120.0,
        1.0 / 5040.0,
        1.0 / 362880.0,
        1.0 / 39916800.0,
        1.0 / 6227020800.0,
    ];
    let mut v = C::new(0.0, 0.0);
    let mut d = C::new(0.0, 0.0);
    for k in (0..K.len()).rev() {
        v = v * w + K[k];
    }
    for k in (1..K.len()).rev() {
        d = d * w + K[k] * k as f64;
    }
    (v, d)
}

/// `coth(x)` for `Re x ≥ 0` without overflow.
fn coth(x: C) -> C {
    let e = (-2.0 * x).exp();
    (1.0 + e) / (1.0 - e)
}

impl Analytic {
    pub fn eval(&self, s: C) -> C {
        self.eval_inner(s, false).0
    }

    pub fn eval_with_deriv(&self, s: C) -> (C, C) {
        self.eval_inner(s, true)
    }

    fn eval_inner(&self, s: C, want_d: bool) -> (C, C) {
        let zero = C::new(0.0, 0.0);
        match *self {
            Analytic::ParabolicSensor { length, delay, reaction, xi } => {
                if xi == 0.0 {
                    return (zero, zero);
                }
                let z = s - reaction;
                let (ratio, dratio) = if z.norm() * length * length < 1e-2 {
                    let (sx, dsx) = sinhc_series(z * xi * xi);
                    let (sl, dsl) = sinhc_series(z * length * length);
                    let r = sx / sl * (xi / length);
                    let dr = (xi / length) * (dsx * xi * xi * sl - sx * dsl * length * length) / (sl * sl);
                    (r, dr)
                } else {
                    let r = z.sqrt();
                    let num = 1.0 - (-2.0 * r * xi).exp();
                    let den = 1.0 - (-2.0 * r * length).exp();
                    let ratio = (r * (xi - length)).exp() * num / den;
                    let dratio = if want_d {
                        let dr = ratio * (xi * coth(r * xi) - length * coth(r * length));
                        dr / (2.0 * r)
                    } else {
                        zero
                    };
                    (ratio, dratio)
                };
                let e = (-s * delay).exp();
                (e * ratio, e * (dratio - ratio * delay))
            }
            Analytic::DelayDifference { theta } => {
                let x = s * theta;
                if x.norm() < 0.1 {
                    // θ Σ (−x)^k/(k+1)!
                    let mut v = C::new(0.0, 0.0);
                    let mut dv = C::new(0.0, 0.0);
                    let mut fact = 1.0;
                    let mut pw = C::new(1.0, 0.0);
                    let mut pw_prev = C::new(0.0, 0.0);
                    for k in 0..12 {
                        fact *= (k + 1) as f64;
                        v += pw / fact;
                        dv += pw_prev * (k as f64) / fact;
                        pw_prev = pw;
                        pw *= -x;
                    }
                    // d/ds of θ f(θ s) with f(x)=Σ(−x)^k/(k+1)!; dv holds Σ k(−x)^{k−1}/(k+1)!.
                    (v * theta, -dv * theta * theta)
                } else {
                    let e = (-x).exp();
                    let v = (1.0 - e) / s;
                    let dv = (theta * e - v) / s;
                    (v, dv)
                }
            }
        }
    }

    /// Sup of |value| on `jν`, `ν ≥ ω`.
    pub fn high_frequency_bound(&self, omega: f64) -> Option<f64> {
        match *self {
            Analytic::ParabolicSensor { length, reaction, xi, .. } => {
                if xi == 0.0 {
                    return Some(0.0);
                }
                let rho = C::new(-reaction, omega).sqrt().re;
                if rho <= 0.0 {
                    return None;
                }
                let den = 1.0 - (-2.0 * rho * length).exp();
                Some((-rho * (length - xi)).exp() * (1.0 + (-2.0 * rho * xi).exp()) / den)
            }
            Analytic::DelayDifference { theta } => {
                if omega <= 0.0 {
                    Some(theta.abs())
                } else {
                    Some((2.0 / omega).min(theta.abs()))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(a: &Analytic, s: C) -> C {
        let h = 1e-6;
        (a.eval(s + h) - a.eval(s - h)) / (2.0 * h)
    }

    #[test]
    fn parabolic_boundary_values() {
        let l = 2.0 * std::f64::consts::PI;
        let a = Analytic::ParabolicSensor { length: l, delay: 1.0, reaction: 0.5, xi: l };
        let s = C::new(0.7, 2.3);
        assert!((a.eval(s) - (-s).exp()).norm() < 1e-12);
    }

    #[test]
    fn parabolic_derivative_both_regimes() {
        let l = 2.0 * std::f64::consts::PI;
        let a = Analytic::ParabolicSensor { length: l, delay: 1.0, reaction: 0.5, xi: l / 3.0 };
        for s in [C::new(1.0, 3.0), C::new(0.5005, 0.0), C::new(0.5, 1e-4), C::new(0.0, 40.0)] {
            let (_, d) = a.eval_with_deriv(s);
            let o = fd(&a, s);
            assert!((d - o).norm() <= 1e-6 * o.norm().max(1e-3), "{s} {d} {o}");
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_switch() {
        let l = 2.0 * std::f64::consts::PI;
        let a = Analytic::ParabolicSensor { length: l, delay: 0.0, reaction: 0.5, xi: 2.0 };
        let z = 1e-2 / (l * l);
        let lo = a.eval(C::new(0.5 + z * 0.999, 0.0));
        let hi = a.eval(C::new(0.5 + z * 1.001, 0.0));
        assert!((lo - hi).norm() < 1e-6);
    }

    #[test]
    fn delay_difference_limit() {
        let a = Analytic::DelayDifference { theta: 2.0 };
        assert!((a.eval(C::new(0.0, 0.0)) - 2.0).norm() < 1e-15);
        for s in [C::new(0.01, 0.02), C::new(0.3, -0.1), C::new(1.0, 5.0)] {
            let exact = (1.0 - (-2.0 * s).exp()) / s;
            assert!((a.eval(s) - exact).norm() < 1e-12);
            let (_, d) = a.eval_with_deriv(s);
            assert!((d - fd(&a, s)).norm() < 1e-7);
        }
    }
}
