//! Certified closed-loop stability through the regularized Nyquist curve.
//!
//! The curve `f̃(jω) = h(jω)·det(I + G K)(jω)` is sampled on `[0, ω̄]` until every interval
//! satisfies `L·Δω < |f̃(jωᵢ)| + |f̃(jωᵢ₊₁)|`, where `L` bounds `|f̃′|` on the interval. The
//! polygon through the samples and their conjugate mirror then has the same winding number as
//! the curve itself. Beyond `ω̄` the tail condition `Re f > α` excludes further encirclements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{self, Verdict};
use crate::xfer::{self, Node, RhpPoleInfo, TransferExpr, C};

pub const SEED_NODES: usize = 64;
pub const NODE_BUDGET: usize = 1_000_000;
const TAIL_BUDGET: usize = 200_000;
const RAY_TOL: f64 = 1e-12;
const ORIGIN_TOL: f64 = 1e-14;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub cutoff: f64,
    pub nodes: Vec<f64>,
    pub values: Vec<C>,
    pub bounds: Vec<f64>,
}

impl SamplingPlan {
    /// Closed polygon: samples on `[0, ω̄]` followed by their conjugates in reverse.
    pub fn polygon(&self) -> Vec<C> {
        let mut p = self.values.clone();
        p.extend(self.values.iter().rev().map(|z| z.conj()));
        p
    }

    pub fn min_abs(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
    }

    /// Checks condition (L) on every interval.
    pub fn satisfies_condition_l(&self) -> bool {
        self.bounds.iter().enumerate().all(|(i, l)| {
            l * (self.nodes[i + 1] - self.nodes[i]) < self.values[i].norm() + self.values[i + 1].norm()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict3 {
    Stable,
    Unstable,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TailCertificate {
    pub cutoff: f64,
    pub alpha: f64,
    /// Upper end of the numerically swept band.
    pub swept_to: f64,
    /// The structural decay bound covers `[swept_to, ∞)`.
    pub waived_beyond: bool,
    pub certified: bool,
    pub min_re: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NyquistCertificate {
    pub plan: SamplingPlan,
    /// Counterclockwise positive.
    pub winding: i64,
    pub expected: i64,
    pub min_abs: f64,
    pub tail: TailCertificate,
    pub declared: RhpPoleInfo,
    pub ray_seed: u64,
    pub verdict: Verdict3,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NyquistOptions {
    pub alpha: f64,
    pub tail_max: f64,
    pub seed: u64,
    pub budget: usize,
    /// Fixed cutoff instead of the automatic choice.
    pub cutoff: Option<f64>,
}

impl Default for NyquistOptions {
    fn default() -> Self {
        NyquistOptions { alpha: 1e-3, tail_max: 1e6, seed: 0x5eed, budget: NODE_BUDGET, cutoff: None }
    }
}

fn jw(w: f64) -> C {
    C::new(0.0, w)
}

/// `f̃` on the imaginary axis; removable points at declared axis poles are
/// evaluated as the symmetric mean `(f̃(j(ω+ε)) + f̃(j(ω−ε)))/2`.
struct Curve<'a> {
    f: &'a TransferExpr,
    removable: Vec<f64>,
}

const REMOVABLE_EPS: f64 = 1e-6;

impl Curve<'_> {
    fn near_removable(&self, w: f64) -> bool {
        self.removable.iter().any(|&p| (w - p).abs() < REMOVABLE_EPS)
    }

    fn value(&self, w: f64) -> Result<C> {
        match self.f.eval_scalar(jw(w)) {
            Err(Error::SingularAt { .. }) if self.near_removable(w) => {
                let a = self.f.eval_scalar(jw(w + REMOVABLE_EPS))?;
                let b = self.f.eval_scalar(jw(w - REMOVABLE_EPS))?;
                Ok(0.5 * (a + b))
            }
            r => r,
        }
    }

    fn slope(&self, w: f64) -> Result<f64> {
        match self.f.eval_deriv(jw(w)) {
            Err(Error::SingularAt { .. }) if self.near_removable(w) => {
                let a = self.f.eval_deriv(jw(w + REMOVABLE_EPS))?[(0, 0)];
                let b = self.f.eval_deriv(jw(w - REMOVABLE_EPS))?[(0, 0)];
                Ok(a.norm().max(b.norm()))
            }
            r => Ok(r?[(0, 0)].norm()),
        }
    }

    fn bound(&self, lo: f64, hi: f64) -> Result<f64> {
        sampling::chebyshev_bound(lo, hi, &mut |w| self.slope(w))
    }
}

/// `max |f̃′|·2` over `[ω⁻, ω⁺]` on the imaginary axis.
pub fn first_order_bound(f: &TransferExpr, lo: f64, hi: f64) -> Result<f64> {
    Curve { f, removable: vec![] }.bound(lo, hi)
}

/// Sample `f̃` on `[0, ω̄]` until condition (L) holds everywhere.
pub fn adaptive_sample(f: &TransferExpr, cutoff: f64) -> Result<SamplingPlan> {
    sample_curve(&Curve { f, removable: vec![] }, cutoff, NODE_BUDGET)
}

fn sample_curve(c: &Curve, cutoff: f64, budget: usize) -> Result<SamplingPlan> {
    let seed = sampling::log_seed(cutoff * 1e-4, cutoff, SEED_NODES, true);
    let r = sampling::refine(
        &seed,
        budget,
        &mut |w| {
            let v = c.value(w)?;
            if v.norm() < ORIGIN_TOL {
                return Err(Error::OriginOnPolygon);
            }
            Ok(v)
        },
        &mut |a, b| c.bound(a, b),
        &mut |a, va: &C, b, vb: &C, l| {
            Ok(if l * (b - a) < va.norm() + vb.norm() { Verdict::Accept } else { Verdict::Split })
        },
    )?;
    Ok(SamplingPlan { cutoff, nodes: r.nodes, values: r.values, bounds: r.bounds })
}

/// Signed winding of a closed polygon about the origin via a randomized ray.
pub fn winding_number(points: &[C], seed: u64) -> Result<i64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidParameter("polygon needs two vertices".into()));
    }
    for i in 0..n {
        let (p, q) = (points[i], points[(i + 1) % n]);
        if segment_distance(p, q) < ORIGIN_TOL {
            return Err(Error::OriginOnPolygon);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'ray: for _ in 0..1000 {
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let rot = C::from_polar(1.0, -theta);
        let pts: Vec<C> = points.iter().map(|p| p * rot).collect();
        if pts.iter().any(|p| p.re > 0.0 && p.im.abs() < RAY_TOL) {
            continue 'ray;
        }
        let mut w = 0i64;
        for i in 0..n {
            let (p, q) = (pts[i], pts[(i + 1) % n]);
            if (p.im < 0.0) != (q.im < 0.0) {
                let x = p.re - p.im * (q.re - p.re) / (q.im - p.im);
                if x > 0.0 {
                    w += if q.im > p.im { 1 } else { -1 };
                }
            }
        }
        return Ok(w);
    }
    Err(Error::OriginOnPolygon)
}

fn segment_distance(p: C, q: C) -> f64 {
    let d = q - p;
    let len2 = d.norm_sqr();
    if len2 == 0.0 {
        return p.norm();
    }
    let t = (-(p.re * d.re + p.im * d.im) / len2).clamp(0.0, 1.0);
    (p + d * t).norm()
}

/// Split `f` as `c + rest`, looking through scalar determinants.
fn split_constant(f: &TransferExpr) -> Option<(f64, TransferExpr)> {
    match f.node() {
        Node::Det { a } if a.dims() == (1, 1) => split_constant(a),
        Node::Sum { a, b } => match (a.node(), b.node()) {
            (Node::Gain { values, .. }, _) if values.len() == 1 => Some((values[0], b.clone())),
            (_, Node::Gain { values, .. }) if values.len() == 1 => Some((values[0], a.clone())),
            _ => None,
        },
        Node::Gain { values, .. } if values.len() == 1 => Some((values[0], TransferExpr::constant(0.0))),
        _ => None,
    }
}

/// `Re f(jν) > α` for all `ν ≥ ω` by structure, if provable.
fn tail_waiver(f: &TransferExpr, omega: f64, alpha: f64) -> bool {
    match split_constant(f) {
        Some((c, rest)) => match rest.high_frequency_bound(omega) {
            Some(b) => c - b > alpha,
            None => false,
        },
        None => false,
    }
}

/// Certify `Re f(jω) > α` on `[ω̄, ω_max]`, and beyond when the decay waiver applies.
pub fn tail_certificate(f: &TransferExpr, cutoff: f64, tail_max: f64, alpha: f64) -> TailCertificate {
    let mut cert = TailCertificate {
        cutoff,
        alpha,
        swept_to: cutoff,
        waived_beyond: false,
        certified: false,
        min_re: f64::INFINITY,
        nodes: 0,
    };
    if tail_waiver(f, cutoff, alpha) {
        cert.waived_beyond = true;
        cert.certified = true;
        return cert;
    }
    let mut lo = cutoff;
    while lo < tail_max {
        let hi = (lo * 10.0).min(tail_max);
        let seed = sampling::log_seed(lo, hi, 16, false);
        let mut min_re = f64::INFINITY;
        let r = sampling::refine(
            &seed,
            TAIL_BUDGET,
            &mut |w| {
                let v = f.eval_scalar(jw(w))?.re;
                min_re = min_re.min(v);
                Ok(v)
            },
            &mut |a, b| first_order_bound(f, a, b),
            &mut |a, va: &f64, b, vb: &f64, l| {
                Ok(if *va <= alpha || *vb <= alpha {
                    Verdict::Abort
                } else if 0.5 * (va + vb) - 0.5 * l * (b - a) > alpha {
                    Verdict::Accept
                } else {
                    Verdict::Split
                })
            },
        );
        cert.min_re = cert.min_re.min(min_re);
        match r {
            Ok(r) if !r.aborted => {
                cert.nodes += r.nodes.len();
                cert.swept_to = hi;
            }
            Ok(r) => {
                cert.nodes += r.nodes.len();
                return cert;
            }
            Err(_) => return cert,
        }
        if tail_waiver(f, hi, alpha) {
            cert.waived_beyond = true;
            break;
        }
        lo = hi;
    }
    cert.certified = true;
    cert
}

pub fn verify_tail(f: &TransferExpr, cutoff: f64, tail_max: f64, alpha: f64) -> bool {
    tail_certificate(f, cutoff, tail_max, alpha).certified
}

/// Theorem-1 test of `feedback(G, K)` given the declared open-loop poles.
pub fn check_stability(
    g: &TransferExpr,
    k: &TransferExpr,
    info: &RhpPoleInfo,
    opts: &NyquistOptions,
) -> Result<NyquistCertificate> {
    info.validate()?;
    let f = xfer::return_difference(g, k)?;
    certify_return_difference(&f, info, opts)
}

/// Nyquist certificate for a given scalar return difference `f`.
pub fn certify_return_difference(f: &TransferExpr, info: &RhpPoleInfo, opts: &NyquistOptions) -> Result<NyquistCertificate> {
    let ft = xfer::regularize(f, &info.axis_poles)?;
    let axis_max = info.axis_poles.iter().map(|p| p.omega).fold(0.0, f64::max);
    let mut cutoff = opts.cutoff.unwrap_or(4.0 * info.frequency_scale.max(axis_max).max(10.0));
    let mut tail = tail_certificate(f, cutoff, opts.tail_max.max(cutoff * 2.0), opts.alpha);
    if opts.cutoff.is_none() {
        for _ in 0..10 {
            if tail.certified {
                break;
            }
            cutoff *= 2.0;
            tail = tail_certificate(f, cutoff, opts.tail_max.max(cutoff * 2.0), opts.alpha);
        }
    }
    let curve = Curve { f: &ft, removable: info.axis_poles.iter().map(|p| p.omega).collect() };
    for p in &info.axis_poles {
        if !(p.omega < cutoff) {
            return Err(Error::DeclaredInfoInconsistent(format!("axis pole {} beyond cutoff", p.omega)));
        }
        match curve.value(p.omega) {
            Ok(v) if v.norm() > ORIGIN_TOL => {}
            _ => {
                return Err(Error::DeclaredInfoInconsistent(format!("no pole of order {} at ±j{}", p.order, p.omega)))
            }
        }
    }
    let plan = match sample_curve(&curve, cutoff, opts.budget) {
        Ok(p) => p,
        Err(Error::SingularAt { re, im }) => {
            return Err(Error::DeclaredInfoInconsistent(format!("undeclared pole near {re}+{im}j")))
        }
        Err(e) => return Err(e),
    };
    let winding = winding_number(&plan.polygon(), opts.seed)?;
    let min_abs = plan.min_abs();
    let expected = info.n_p as i64;
    let verdict = if !tail.certified {
        Verdict3::Inconclusive
    } else if winding == expected && min_abs > 0.0 {
        Verdict3::Stable
    } else {
        Verdict3::Unstable
    };
    Ok(NyquistCertificate { plan, winding, expected, min_abs, tail, declared: info.clone(), ray_seed: opts.seed, verdict })
}

/// Stability of `feedback(G, K)` through the stable pre-stabilized `G₀` and `ΔK = K − K₀`.
///
/// `delta_info` declares the unstable poles of `ΔK` (none for stable structures).
pub fn check_stability_prestabilized(
    g0: &TransferExpr,
    k: &TransferExpr,
    k0: &TransferExpr,
    delta_info: &RhpPoleInfo,
    opts: &NyquistOptions,
) -> Result<NyquistCertificate> {
    let dk = k.sub_merged(k0)?;
    check_stability(g0, &dk, delta_info, opts)
}

/// `omega,re,im` rows of the sampled curve.
pub fn nyquist_csv(plan: &SamplingPlan) -> String {
    let mut s = String::from("omega,re,im\n");
    for (w, z) in plan.nodes.iter().zip(&plan.values) {
        s.push_str(&format!("{w:.12e},{:.12e},{:.12e}\n", z.re, z.im));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::xfer::Polynomial;

    #[test]
    fn square_windings() {
        let sq = [C::new(1.0, 1.0), C::new(-1.0, 1.0), C::new(-1.0, -1.0), C::new(1.0, -1.0)];
        assert_eq!(winding_number(&sq, 1).unwrap(), 1);
        let shifted: Vec<C> = sq.iter().map(|z| z + 10.0).collect();
        assert_eq!(winding_number(&shifted, 1).unwrap(), 0);
        let rev: Vec<C> = sq.iter().rev().copied().collect();
        assert_eq!(winding_number(&rev, 1).unwrap(), -1);
    }

    #[test]
    fn origin_on_edge_rejected() {
        let p = [C::new(-1.0, 0.0), C::new(1.0, 0.0), C::new(0.0, 1.0)];
        assert_eq!(winding_number(&p, 3), Err(Error::OriginOnPolygon));
    }

    #[test]
    fn constant_curve_keeps_seed() {
        let plan = adaptive_sample(&TransferExpr::constant(1.0), 40.0).unwrap();
        assert_eq!(plan.nodes.len(), SEED_NODES);
    }

    #[test]
    fn identity_path_bound() {
        let s = TransferExpr::rational(Polynomial::s(), Polynomial::one()).unwrap();
        assert_eq!(first_order_bound(&s, 0.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn first_order_loop_is_stable() {
        let g = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![1.0, 1.0])).unwrap();
        let c = check_stability(&g, &TransferExpr::constant(1.0), &RhpPoleInfo::stable(), &NyquistOptions::default())
            .unwrap();
        assert_eq!(c.winding, 0);
        assert_eq!(c.verdict, Verdict3::Stable);
        assert!(c.plan.satisfies_condition_l());
    }

    #[test]
    fn unstable_plant_counts() {
        // G = 1/(s−1): K = 2 stabilizes, K = 0.5 does not.
        let g = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![-1.0, 1.0])).unwrap();
        let info = RhpPoleInfo::with_unstable(1, 1.0);
        let opts = NyquistOptions::default();
        let ok = check_stability(&g, &TransferExpr::constant(2.0), &info, &opts).unwrap();
        assert_eq!(ok.winding, 1);
        assert_eq!(ok.verdict, Verdict3::Stable);
        let bad = check_stability(&g, &TransferExpr::constant(0.5), &info, &opts).unwrap();
        assert_eq!(bad.winding, 0);
        assert_eq!(bad.verdict, Verdict3::Unstable);
    }

    #[test]
    fn integrator_with_declared_axis_pole() {
        // G = 1/(s(s+1)), K = 1: closed loop s² + s + 1 stable.
        let g = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![0.0, 1.0, 1.0])).unwrap();
        let info = RhpPoleInfo { n_p: 0, axis_poles: vec![xfer::AxisPole { omega: 0.0, order: 1 }], frequency_scale: 1.0 };
        let c = check_stability(&g, &TransferExpr::constant(1.0), &info, &NyquistOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict3::Stable);
        let missing = check_stability(&g, &TransferExpr::constant(1.0), &RhpPoleInfo::stable(), &NyquistOptions::default());
        assert!(matches!(missing, Err(Error::DeclaredInfoInconsistent(_))));
    }
}
