//! Zeros of quasi-polynomials: the delay-margin recipe for `A(s) + B(s)e^{−hs}` and an
//! argument-principle counter on rectangles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nyquist;
use crate::sampling::{self, Verdict};
use crate::xfer::{Polynomial, QuasiPolynomial, TransferExpr, C};

const EDGE_SEED: usize = 33;
const CONTOUR_BUDGET: usize = 400_000;
const LADDER_STEPS: usize = 8;
const RAY_SEED: u64 = 0x5eed;

/// `P(s) = A(s) + B(s)e^{−hs}` with `A = s² + x₁s`, `B = x₂s + x₃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelayMarginProblem {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub h: f64,
}

impl DelayMarginProblem {
    pub fn new(x1: f64, x2: f64, x3: f64) -> Self {
        DelayMarginProblem { x1, x2, x3, h: 1.0 }
    }

    pub fn a(&self) -> Polynomial {
        Polynomial::new(vec![0.0, self.x1, 1.0])
    }

    pub fn b(&self) -> Polynomial {
        Polynomial::new(vec![self.x3, self.x2])
    }

    pub fn quasi(&self, h: f64) -> QuasiPolynomial {
        QuasiPolynomial::new(vec![(self.a(), 0.0), (self.b(), h)])
    }

    /// Necessary condition for stability at any delay.
    pub fn well_posed(&self) -> bool {
        self.x1 > -1.0
    }
}

/// Positive root of `4ω³ − 2ω(1 − x₁²) = ½√(5 − 2x₁² + x₁⁴)`.
pub fn omega_sigma(x1: f64) -> Result<f64> {
    if !(x1 > -1.0) {
        return Err(Error::NoPositiveRoot);
    }
    let rhs = 0.5 * (5.0 - 2.0 * x1 * x1 + x1.powi(4)).sqrt();
    let k = 2.0 * (1.0 - x1 * x1);
    let f = |w: f64| 4.0 * w.powi(3) - k * w - rhs;
    let df = |w: f64| 12.0 * w * w - k;
    // f(0) < 0 and f is eventually increasing, so the positive root is bracketed.
    let mut lo = 0.0;
    let mut hi = 1.0;
    while f(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e150 {
            return Err(Error::NoPositiveRoot);
        }
    }
    let mut w = (rhs / 4.0).cbrt().clamp(lo, hi);
    for _ in 0..200 {
        let fw = f(w);
        if fw == 0.0 {
            return Ok(w);
        }
        if fw < 0.0 {
            lo = lo.max(w);
        } else {
            hi = hi.min(w);
        }
        let d = df(w);
        let mut next = if d != 0.0 { w - fw / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - w).abs() <= 4.0 * f64::EPSILON * w.abs() {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

/// `arg(−B(jω)/A(jω))` in `[0, 2π)`.
fn arg_ratio(p: &DelayMarginProblem, w: f64) -> Result<f64> {
    let s = C::new(0.0, w);
    let a = p.a().eval(s);
    if a.norm() == 0.0 {
        return Err(Error::AOnAxisZero);
    }
    let r = -p.b().eval(s) / a;
    Ok(r.arg().rem_euclid(std::f64::consts::TAU))
}

fn smallest_h(arg0: f64, w: f64) -> f64 {
    if arg0 > 0.0 {
        arg0 / w
    } else {
        std::f64::consts::TAU / w
    }
}

/// `h_{σ,0}` from the printed recipe: `ω_σ h = arg(−B/A)(jω_σ) + 2kπ` at the cubic's root.
pub fn h_sigma0_recipe(x1: f64, x2: f64, x3: f64) -> Result<f64> {
    let p = DelayMarginProblem::new(x1, x2, x3);
    if x2 == 0.0 && x3 == 0.0 {
        return Ok(f64::INFINITY);
    }
    let w = omega_sigma(x1)?;
    Ok(smallest_h(arg_ratio(&p, w)?, w))
}

/// Positive roots of `|A(jω)| = |B(jω)|`, i.e. `ω⁴ + (x₁² − x₂²)ω² − x₃² = 0`.
pub fn crossing_frequencies(x1: f64, x2: f64, x3: f64) -> Vec<f64> {
    let b = x1 * x1 - x2 * x2;
    let c = -x3 * x3;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let mut out = vec![];
    for z in [(-b + sq) / 2.0, (-b - sq) / 2.0] {
        if z > 0.0 {
            let w = z.sqrt();
            if !out.iter().any(|&v: &f64| (v - w).abs() <= 1e-14 * w) {
                out.push(w);
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// Delay margin of `P_h`: stable for `0 ≤ h < h_{σ,0}`.
///
/// Returns `0` when `P_0` is not stable and `+∞` when no crossing frequency exists.
pub fn h_sigma0(x1: f64, x2: f64, x3: f64) -> Result<f64> {
    if !(x1 > -1.0) {
        return Err(Error::NoPositiveRoot);
    }
    if x2 == 0.0 && x3 == 0.0 {
        return Ok(if x1 > 0.0 { f64::INFINITY } else { 0.0 });
    }
    // P_0 = s² + (x₁ + x₂)s + x₃
    if !(x1 + x2 > 0.0 && x3 > 0.0) {
        return Ok(0.0);
    }
    let p = DelayMarginProblem::new(x1, x2, x3);
    let mut best = f64::INFINITY;
    for w in crossing_frequencies(x1, x2, x3) {
        best = best.min(smallest_h(arg_ratio(&p, w)?, w));
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub re: (f64, f64),
    pub im: (f64, f64),
}

impl Rect {
    pub fn new(re_lo: f64, re_hi: f64, im_lo: f64, im_hi: f64) -> Self {
        Rect { re: (re_lo, re_hi), im: (im_lo, im_hi) }
    }

    pub fn center(&self) -> C {
        C::new(0.5 * (self.re.0 + self.re.1), 0.5 * (self.im.0 + self.im.1))
    }

    pub fn contains(&self, s: C) -> bool {
        s.re >= self.re.0 && s.re <= self.re.1 && s.im >= self.im.0 && s.im <= self.im.1
    }

    /// Counterclockwise corners starting bottom-left.
    fn corners(&self) -> [C; 4] {
        [
            C::new(self.re.0, self.im.0),
            C::new(self.re.1, self.im.0),
            C::new(self.re.1, self.im.1),
            C::new(self.re.0, self.im.1),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCount {
    pub rect: Rect,
    /// Zeros minus poles inside the rectangle.
    pub count: i64,
    /// `min |P|` over the contour samples.
    pub margin: f64,
    pub nodes: usize,
}

/// Argument-principle count of `f` (value and derivative) over the rectangle boundary.
pub fn count_zeros_fn(f: &dyn Fn(C) -> Result<(C, C)>, rect: Rect) -> Result<RegionCount> {
    if !(rect.re.1 > rect.re.0 && rect.im.1 > rect.im.0) {
        return Err(Error::InvalidParameter(format!("degenerate rectangle {rect:?}")));
    }
    let k = rect.corners();
    let mut pts: Vec<C> = vec![];
    let mut margin = f64::INFINITY;
    for e in 0..4 {
        let (z0, z1) = (k[e], k[(e + 1) % 4]);
        let len = (z1 - z0).norm();
        let dir = (z1 - z0) / len;
        let at = |t: f64| z0 + dir * t;
        let seed: Vec<f64> = (0..EDGE_SEED).map(|i| len * i as f64 / (EDGE_SEED - 1) as f64).collect();
        let r = sampling::refine(
            &seed,
            CONTOUR_BUDGET,
            &mut |t| {
                let v = f(at(t))?.0;
                if !v.is_finite() {
                    return Err(Error::SingularAt { re: at(t).re, im: at(t).im });
                }
                Ok(v)
            },
            &mut |a, b| sampling::chebyshev_bound(a, b, &mut |t| Ok(f(at(t))?.1.norm())),
            &mut |a, va: &C, b, vb: &C, l| {
                Ok(if l * (b - a) < va.norm() + vb.norm() { Verdict::Accept } else { Verdict::Split })
            },
        );
        let r = match r {
            Ok(r) => r,
            Err(Error::RefinementBudgetExceeded { .. }) => return Err(Error::ZeroOnContour { margin }),
            Err(e) => return Err(e),
        };
        for v in &r.values {
            margin = margin.min(v.norm());
        }
        // drop the shared corner, it starts the next edge
        pts.extend_from_slice(&r.values[..r.values.len() - 1]);
    }
    let n = pts.len();
    let count = match nyquist::winding_number(&pts, RAY_SEED) {
        Ok(w) => w,
        Err(Error::OriginOnPolygon) => return Err(Error::ZeroOnContour { margin }),
        Err(e) => return Err(e),
    };
    Ok(RegionCount { rect, count, margin, nodes: n })
}

pub fn count_zeros(p: &QuasiPolynomial, rect: Rect) -> Result<RegionCount> {
    count_zeros_fn(&|s| Ok(p.eval_with_deriv(s)), rect)
}

/// Count for a scalar transfer expression (zeros minus poles).
pub fn count_zeros_expr(f: &TransferExpr, rect: Rect) -> Result<RegionCount> {
    if f.dims() != (1, 1) {
        return Err(Error::DimensionMismatch("count_zeros needs a scalar function".into()));
    }
    count_zeros_fn(
        &|s| {
            let (v, d) = f.eval_with_deriv(s)?;
            Ok((v[(0, 0)], d[(0, 0)]))
        },
        rect,
    )
}

/// Zeros in `Re s ≥ 0` on a ladder of rectangles `[0, X] × [−Y, Y]` doubled until two
/// consecutive counts agree.
pub fn rhp_count(p: &QuasiPolynomial) -> Result<RegionCount> {
    let r0 = p.rhp_zero_free_radius().unwrap_or(4.0).max(1.0);
    let retarded = p.is_retarded() && p.rhp_zero_free_radius().is_some();
    let mut ext = r0;
    let mut prev: Option<RegionCount> = None;
    for _ in 0..LADDER_STEPS {
        let x = if retarded { r0 } else { ext };
        let c = count_zeros(p, Rect::new(0.0, x, -ext, ext))?;
        if retarded {
            return Ok(c);
        }
        if let Some(pc) = &prev {
            if pc.count == c.count {
                return Ok(c);
            }
        }
        prev = Some(c);
        ext *= 2.0;
    }
    Ok(prev.expect("ladder ran"))
}

/// Newton iteration for a zero of `f` started at `s0`.
pub fn locate_zero(f: &dyn Fn(C) -> Result<(C, C)>, s0: C, tol: f64) -> Result<C> {
    let mut s = s0;
    for _ in 0..100 {
        let (v, d) = f(s)?;
        if d.norm() == 0.0 {
            return Err(Error::SingularAt { re: s.re, im: s.im });
        }
        let step = v / d;
        s -= step;
        if step.norm() <= tol * (1.0 + s.norm()) {
            return Ok(s);
        }
    }
    Err(Error::InvalidParameter("Newton did not converge".into()))
}

/// Count and locate the single zero of `p` in `rect`, if exactly one is there.
pub fn isolate_zero(p: &QuasiPolynomial, rect: Rect) -> Result<(RegionCount, Option<C>)> {
    let c = count_zeros(p, rect)?;
    if c.count != 1 {
        return Ok((c, None));
    }
    let z = locate_zero(&|s| Ok(p.eval_with_deriv(s)), rect.center(), 1e-15)?;
    Ok((c, rect.contains(z).then_some(z)))
}

/// `(1−q)s(d + n₃) + (1−q)sQe^{−2s}(n₃ − d) + 2n₁e^{−s}` with `Q = (1+q)/(1−q)`.
pub fn ad_hoc_quasi(d: &Polynomial, n3: &Polynomial, n1: &Polynomial, q: f64) -> QuasiPolynomial {
    let qq = (1.0 + q) / (1.0 - q);
    let s = Polynomial::s();
    let t0 = (&s * &(d + n3)).scale(1.0 - q);
    let t2 = (&s * &(n3 - d)).scale((1.0 - q) * qq);
    let t1 = n1.scale(2.0);
    QuasiPolynomial::new(vec![(t0, 0.0), (t1, 1.0), (t2, 2.0)])
}

/// Whether `[n₁/d, 0, n₃/d]` stabilizes the wave plant: no zeros of the loop quasi-polynomial
/// in the closed right half-plane.
pub fn check_ad_hoc_stabilizer(d: &Polynomial, n3: &Polynomial, n1: &Polynomial, q: f64) -> Result<bool> {
    if n1.degree() > d.degree() || n3.degree() > d.degree() {
        return Err(Error::NonRealizableController("deg nᵢ > deg d".into()));
    }
    Ok(rhp_count(&ad_hoc_quasi(d, n3, n1, q))?.count == 0)
}

/// Number of zeros of `P_h` in the closed right half-plane, with zeros on the axis counted as one.
pub fn rhp_zeros_at_delay(p: &DelayMarginProblem, h: f64) -> Result<i64> {
    match rhp_count(&p.quasi(h)) {
        Ok(c) => Ok(c.count),
        Err(Error::ZeroOnContour { .. }) => Ok(1),
        Err(e) => Err(e),
    }
}

/// Oracle for the delay margin: step `h` from 0 until `P_h` gains a right half-plane zero,
/// then bisect to `tol`. Returns the bracket, or `None` if stable up to `h_max`.
pub fn delay_sweep(p: &DelayMarginProblem, h_max: f64, step: f64, tol: f64) -> Result<Option<(f64, f64)>> {
    if rhp_zeros_at_delay(p, 0.0)? > 0 {
        return Ok(Some((0.0, 0.0)));
    }
    let mut lo = 0.0;
    loop {
        let hi = (lo + step).min(h_max);
        if rhp_zeros_at_delay(p, hi)? > 0 {
            let (mut a, mut b) = (lo, hi);
            while b - a > tol {
                let m = 0.5 * (a + b);
                if rhp_zeros_at_delay(p, m)? > 0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Ok(Some((a, b)));
        }
        if hi >= h_max {
            return Ok(None);
        }
        lo = hi;
    }
}
