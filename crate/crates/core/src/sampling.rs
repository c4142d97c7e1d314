//! Interval refinement engine shared by the certified sampling conditions.

use crate::error::{Error, Result};

/// Safety factor applied to probed derivative maxima.
pub const BOUND_SAFETY: f64 = 2.0;
/// Probe-variation ratio that triggers bisection of a bound interval.
const VARIATION_SPLIT: f64 = 4.0;
const BOUND_DEPTH: u32 = 2;

/// Bound on `|g'(t)|` over `[a, b]` from a 9-point Chebyshev–Lobatto probe.
pub fn chebyshev_bound(a: f64, b: f64, dmag: &mut dyn FnMut(f64) -> Result<f64>) -> Result<f64> {
    bound_rec(a, b, dmag, BOUND_DEPTH)
}

fn bound_rec(a: f64, b: f64, dmag: &mut dyn FnMut(f64) -> Result<f64>, depth: u32) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut mx: f64 = 0.0;
    let mut mn = f64::INFINITY;
    for k in 0..9 {
        let t = mid + half * (std::f64::consts::PI * k as f64 / 8.0).cos();
        let v = dmag(t)?;
        if !v.is_finite() {
            return Err(Error::SingularAt { re: 0.0, im: t });
        }
        mx = mx.max(v);
        mn = mn.min(v);
    }
    if depth > 0 && mx > VARIATION_SPLIT * mn {
        let l = bound_rec(a, mid, dmag, depth - 1)?;
        let r = bound_rec(mid, b, dmag, depth - 1)?;
        return Ok(l.max(r));
    }
    Ok(BOUND_SAFETY * mx)
}

pub enum Verdict {
    Accept,
    Split,
    Abort,
}

pub struct Refined<V> {
    pub nodes: Vec<f64>,
    pub values: Vec<V>,
    /// Per-interval first-order bounds.
    pub bounds: Vec<f64>,
    pub aborted: bool,
}

/// `0 ∪` log-uniform grid of `n − 1` points ending at `hi`.
pub fn log_seed(lo: f64, hi: f64, n: usize, include_zero: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let m = if include_zero {
        out.push(0.0);
        n - 1
    } else {
        n
    };
    let (l0, l1) = (lo.ln(), hi.ln());
    for k in 0..m {
        let t = if m == 1 { 1.0 } else { k as f64 / (m - 1) as f64 };
        out.push((l0 + (l1 - l0) * t).exp());
    }
    if let Some(last) = out.last_mut() {
        *last = hi;
    }
    out
}

/// Bisect intervals of `seed` until `test` accepts each of them.
///
/// `test(a, va, b, vb, bound)` decides an interval given endpoint values and the first-order bound.
pub fn refine<V: Clone>(
    seed: &[f64],
    budget: usize,
    eval: &mut dyn FnMut(f64) -> Result<V>,
    bound: &mut dyn FnMut(f64, f64) -> Result<f64>,
    test: &mut dyn FnMut(f64, &V, f64, &V, f64) -> Result<Verdict>,
) -> Result<Refined<V>> {
    let mut vals = Vec::with_capacity(seed.len());
    for &t in seed {
        vals.push(eval(t)?);
    }
    let mut count = seed.len();
    let mut nodes = vec![seed[0]];
    let mut values = vec![vals[0].clone()];
    let mut bounds = vec![];
    // pending intervals, leftmost on top
    let mut stack: Vec<(f64, V, f64, V)> = Vec::new();
    for i in (0..seed.len() - 1).rev() {
        stack.push((seed[i], vals[i].clone(), seed[i + 1], vals[i + 1].clone()));
    }
    while let Some((a, va, b, vb)) = stack.pop() {
        let l = bound(a, b)?;
        match test(a, &va, b, &vb, l)? {
            Verdict::Accept => {
                nodes.push(b);
                values.push(vb);
                bounds.push(l);
            }
            Verdict::Abort => return Ok(Refined { nodes, values, bounds, aborted: true }),
            Verdict::Split => {
                let m = 0.5 * (a + b);
                if count >= budget || !(m > a && m < b) || (b - a) <= 1e-13 * b.abs().max(1.0) {
                    return Err(Error::RefinementBudgetExceeded { budget });
                }
                let vm = eval(m)?;
                count += 1;
                stack.push((m, vm.clone(), b, vb));
                stack.push((a, va, m, vm));
            }
        }
    }
    Ok(Refined { nodes, values, bounds, aborted: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_slope_bound() {
        let b = chebyshev_bound(0.0, 1.0, &mut |_| Ok(1.0)).unwrap();
        assert_eq!(b, 2.0);
    }

    #[test]
    fn refine_keeps_order() {
        let seed = log_seed(1e-3, 10.0, 8, true);
        let r = refine(
            &seed,
            10_000,
            &mut |t| Ok(t.sin()),
            &mut |_, _| Ok(1.0),
            &mut |a, _, b, _, _| Ok(if b - a < 0.1 { Verdict::Accept } else { Verdict::Split }),
        )
        .unwrap();
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.nodes.len(), r.values.len());
        assert_eq!(r.bounds.len(), r.nodes.len() - 1);
        assert_eq!(*r.nodes.last().unwrap(), 10.0);
    }
}
