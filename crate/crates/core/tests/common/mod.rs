#![allow(dead_code)]

use pdectl::xfer::{Polynomial, QuasiPolynomial, RhpPoleInfo, TransferExpr, C};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `G = n(s)e^{−τs}/d(s)` under the static gain `k`.
pub struct DelayLoop {
    pub num: Polynomial,
    pub den: Polynomial,
    pub tau: f64,
    pub k: f64,
    pub open_rhp: usize,
}

impl DelayLoop {
    pub fn g(&self) -> TransferExpr {
        let g = TransferExpr::rational(self.num.clone(), self.den.clone()).unwrap();
        if self.tau > 0.0 {
            g.mul(&TransferExpr::delay(self.tau).unwrap()).unwrap()
        } else {
            g
        }
    }

    pub fn k(&self) -> TransferExpr {
        TransferExpr::constant(self.k)
    }

    pub fn info(&self) -> RhpPoleInfo {
        let scale = self.den.roots().iter().chain(self.num.roots().iter()).map(|r| r.norm()).fold(1.0, f64::max);
        RhpPoleInfo::with_unstable(self.open_rhp, scale)
    }

    /// `d(s) + k n(s) e^{−τs}`, whose zeros are the closed-loop poles.
    pub fn characteristic(&self) -> QuasiPolynomial {
        QuasiPolynomial::new(vec![(self.den.clone(), 0.0), (self.num.scale(self.k), self.tau)])
    }
}

/// Strictly proper loops of order one to three, a few with unstable open-loop poles.
pub fn random_delay_loops(count: usize, seed: u64) -> Vec<DelayLoop> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let order = rng.random_range(1..=3usize);
            let mut roots = vec![];
            let mut open_rhp = 0;
            while roots.len() < order {
                if order - roots.len() >= 2 && rng.random_bool(0.4) {
                    let (re, im) = (-rng.random_range(0.2..2.0), rng.random_range(0.5..4.0));
                    roots.push(C::new(re, im));
                    roots.push(C::new(re, -im));
                } else {
                    let unstable = open_rhp == 0 && rng.random_bool(0.3);
                    let r = if unstable { rng.random_range(0.2..1.0) } else { -rng.random_range(0.2..3.0) };
                    open_rhp += unstable as usize;
                    roots.push(C::new(r, 0.0));
                }
            }
            let den = Polynomial::from_roots(&roots);
            let num_deg = rng.random_range(0..order);
            let num = Polynomial::new((0..=num_deg).map(|_| rng.random_range(0.3..2.0)).collect());
            DelayLoop { num, den, tau: rng.random_range(0.0..1.0), k: rng.random_range(0.1..3.0), open_rhp }
        })
        .collect()
}

/// Second-order sections `ωₙ²/(s² + 2ζωₙs + ωₙ²)` with known peak gain.
pub struct Resonance {
    pub zeta: f64,
    pub wn: f64,
}

impl Resonance {
    pub fn tf(&self) -> TransferExpr {
        let w2 = self.wn * self.wn;
        TransferExpr::rational(
            Polynomial::constant(w2),
            Polynomial::new(vec![w2, 2.0 * self.zeta * self.wn, 1.0]),
        )
        .unwrap()
    }

    pub fn peak(&self) -> f64 {
        if self.zeta < std::f64::consts::FRAC_1_SQRT_2 {
            1.0 / (2.0 * self.zeta * (1.0 - self.zeta * self.zeta).sqrt())
        } else {
            1.0
        }
    }
}

pub fn resonances() -> Vec<Resonance> {
    let mut out = vec![];
    for zeta in [0.02, 0.1, 0.3, 0.5, 0.9] {
        for wn in [0.5, 3.0, 40.0] {
            out.push(Resonance { zeta, wn });
        }
    }
    out
}

/// First-order tunable controller `(x₂s + x₁)/(s + x₀)` around a stable lag `G`.
pub struct GradientCase {
    pub g: TransferExpr,
    pub x: Vec<f64>,
}

pub fn tunable_lag() -> pdectl::plants::ControllerStructure {
    pdectl::plants::ControllerStructure::RationalRow { outputs: 1, num_degree: 1, den_degree: 1 }
}

impl GradientCase {
    /// `G(1 + K(x)G)^{-1}` with `K(x)` marked tunable.
    pub fn channel(&self, x: &[f64]) -> TransferExpr {
        TransferExpr::feedback(&self.g, &tunable_lag().build(x).unwrap(), 1.0).unwrap()
    }
}

pub fn gradient_cases(count: usize, seed: u64) -> Vec<GradientCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let (zeta, wn) = (rng.random_range(0.15..0.8), rng.random_range(0.5..5.0));
            let g = Resonance { zeta, wn }.tf();
            let x = vec![rng.random_range(0.5..3.0), rng.random_range(0.05..0.5), rng.random_range(0.0..0.3)];
            GradientCase { g, x }
        })
        .collect()
}

/// Relative ℓ₂ distance between the analytic gradient and central differences of `f`.
pub fn gradient_mismatch(g: &[f64], x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut fd = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = 1e-5 * x[k].abs().max(1e-2);
        let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
        xp[k] += h;
        xm[k] -= h;
        fd[k] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let den: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-12)
}
