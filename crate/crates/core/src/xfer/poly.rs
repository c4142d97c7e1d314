use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

type C = Complex64;

/// Real polynomial with ascending coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl From<Vec<f64>> for Polynomial {
    fn from(v: Vec<f64>) -> Self {
        Polynomial::new(v)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}

impl Polynomial {
    pub fn new(mut coeffs: Vec<f64>) -> Self {
        while coeffs.last() == Some(&0.0) {
            coeffs.pop();
        }
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![] }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    pub fn one() -> Self {
        Polynomial::constant(1.0)
    }

    /// The polynomial `s`.
    pub fn s() -> Self {
        Polynomial::new(vec![0.0, 1.0])
    }

    /// Monic polynomial with the given real or conjugate-paired roots.
    pub fn from_roots(roots: &[C]) -> Self {
        let mut acc = vec![C::new(1.0, 0.0)];
        for &r in roots {
            let mut next = vec![C::new(0.0, 0.0); acc.len() + 1];
            for (i, &a) in acc.iter().enumerate() {
                next[i + 1] += a;
                next[i] -= a * r;
            }
            acc = next;
        }
        Polynomial::new(acc.into_iter().map(|c| c.re).collect())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Degree; the zero polynomial reports 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn leading(&self) -> f64 {
        self.coeffs.last().copied().unwrap_or(0.0)
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs.get(k).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, s: C) -> C {
        let mut acc = C::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            acc = acc * s + c;
        }
        acc
    }

    /// Value and first derivative by a single Horner pass.
    pub fn eval_with_deriv(&self, s: C) -> (C, C) {
        let mut p = C::new(0.0, 0.0);
        let mut dp = C::new(0.0, 0.0);
        for &c in self.coeffs.iter().rev() {
            dp = dp * s + p;
            p = p * s + c;
        }
        (p, dp)
    }

    pub fn derivative(&self) -> Polynomial {
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn scale(&self, a: f64) -> Polynomial {
        Polynomial::new(self.coeffs.iter().map(|c| c * a).collect())
    }

    /// Divide through by the leading coefficient.
    pub fn monic(&self) -> Polynomial {
        if self.is_zero() {
            return self.clone();
        }
        self.scale(1.0 / self.leading())
    }

    /// Sum of absolute coefficients weighted by `w^(k - shift)`.
    pub(crate) fn abs_weighted(&self, w: f64, shift: i32) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c.abs() * w.powi(k as i32 - shift))
            .sum()
    }

    /// Complex roots from the companion matrix.
    pub fn roots(&self) -> Vec<C> {
        let n = self.degree();
        if self.is_zero() || n == 0 {
            return vec![];
        }
        let lead = self.leading();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            m[(i, n - 1)] = -self.coeffs[i] / lead;
        }
        m.complex_eigenvalues().iter().copied().collect()
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, o: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(o.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) + o.coeff(k)).collect())
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, o: &Polynomial) -> Polynomial {
        let n = self.coeffs.len().max(o.coeffs.len());
        Polynomial::new((0..n).map(|k| self.coeff(k) - o.coeff(k)).collect())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, o: &Polynomial) -> Polynomial {
        if self.is_zero() || o.is_zero() {
            return Polynomial::zero();
        }
        let mut out = vec![0.0; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Polynomial::new(out)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

/// Sum of polynomial-times-delay terms `Σ p_k(s) e^{-θ_k s}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(Polynomial, f64)>", into = "Vec<(Polynomial, f64)>")]
pub struct QuasiPolynomial {
    terms: Vec<(Polynomial, f64)>,
}

impl From<Vec<(Polynomial, f64)>> for QuasiPolynomial {
    fn from(v: Vec<(Polynomial, f64)>) -> Self {
        QuasiPolynomial::new(v)
    }
}

impl From<QuasiPolynomial> for Vec<(Polynomial, f64)> {
    fn from(q: QuasiPolynomial) -> Self {
        q.terms
    }
}

impl From<Polynomial> for QuasiPolynomial {
    fn from(p: Polynomial) -> Self {
        QuasiPolynomial::new(vec![(p, 0.0)])
    }
}

impl QuasiPolynomial {
    /// Sorts by delay, merges equal delays and drops zero terms.
    pub fn new(mut terms: Vec<(Polynomial, f64)>) -> Self {
        terms.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut out: Vec<(Polynomial, f64)> = Vec::with_capacity(terms.len());
        for (p, d) in terms {
            match out.last_mut() {
                Some(last) if last.1 == d => last.0 = &last.0 + &p,
                _ => out.push((p, d)),
            }
        }
        out.retain(|(p, _)| !p.is_zero());
        QuasiPolynomial { terms: out }
    }

    pub fn zero() -> Self {
        QuasiPolynomial { terms: vec![] }
    }

    pub fn one() -> Self {
        Polynomial::one().into()
    }

    pub fn term(p: Polynomial, delay: f64) -> Self {
        QuasiPolynomial::new(vec![(p, delay)])
    }

    pub fn terms(&self) -> &[(Polynomial, f64)] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// True when there are no delayed terms.
    pub fn is_polynomial(&self) -> bool {
        self.terms.iter().all(|(_, d)| *d == 0.0)
    }

    /// The undelayed polynomial (zero if absent).
    pub fn principal(&self) -> Polynomial {
        match self.terms.first() {
            Some((p, d)) if *d == 0.0 => p.clone(),
            _ => Polynomial::zero(),
        }
    }

    pub fn max_degree(&self) -> usize {
        self.terms.iter().map(|(p, _)| p.degree()).max().unwrap_or(0)
    }

    /// Retarded: the principal term strictly dominates every delayed term in degree.
    pub fn is_retarded(&self) -> bool {
        let p0 = self.principal();
        if p0.is_zero() {
            return false;
        }
        self.terms
            .iter()
            .filter(|(_, d)| *d > 0.0)
            .all(|(p, _)| p.degree() < p0.degree())
    }

    pub fn eval(&self, s: C) -> C {
        self.terms
            .iter()
            .map(|(p, d)| p.eval(s) * (-s * *d).exp())
            .sum()
    }

    pub fn eval_with_deriv(&self, s: C) -> (C, C) {
        let mut v = C::new(0.0, 0.0);
        let mut dv = C::new(0.0, 0.0);
        for (p, d) in &self.terms {
            let e = (-s * *d).exp();
            let (pv, pd) = p.eval_with_deriv(s);
            v += pv * e;
            dv += (pd - pv * *d) * e;
        }
        (v, dv)
    }

    /// `d/ds` term by term: `(p′ − τp)e^{−τs}`.
    pub fn derivative(&self) -> QuasiPolynomial {
        QuasiPolynomial::new(self.terms.iter().map(|(p, d)| (&p.derivative() - &p.scale(*d), *d)).collect())
    }

    pub fn scale(&self, a: f64) -> QuasiPolynomial {
        QuasiPolynomial::new(self.terms.iter().map(|(p, d)| (p.scale(a), *d)).collect())
    }

    pub fn mul_poly(&self, q: &Polynomial) -> QuasiPolynomial {
        QuasiPolynomial::new(self.terms.iter().map(|(p, d)| (p * q, *d)).collect())
    }

    /// Multiply by `e^{-θ s}`.
    pub fn delay(&self, theta: f64) -> QuasiPolynomial {
        QuasiPolynomial::new(self.terms.iter().map(|(p, d)| (p.clone(), d + theta)).collect())
    }

    /// Leading coefficient of the principal term, used for normalization.
    pub fn principal_leading(&self) -> f64 {
        self.principal().leading()
    }

    /// Radius beyond which no zero lies in the closed right half-plane.
    ///
    /// Uses |P(s)| ≥ |p₀(s)| − Σ|p_k(s)| there; only available for retarded P.
    pub fn rhp_zero_free_radius(&self) -> Option<f64> {
        if !self.is_retarded() {
            return None;
        }
        let p0 = self.principal();
        let n = p0.degree() as i32;
        let lead = p0.leading().abs();
        let margin = |r: f64| {
            let mut rest = 0.0;
            for (k, c) in p0.coeffs().iter().enumerate().take(n as usize) {
                rest += c.abs() * r.powi(k as i32 - n);
            }
            for (p, d) in &self.terms {
                if *d > 0.0 {
                    rest += p.abs_weighted(r, n);
                }
            }
            lead - rest
        };
        let mut r = 1.0;
        for _ in 0..200 {
            if margin(r) > 0.0 {
                return Some(r);
            }
            r *= 2.0;
        }
        None
    }
}

impl Add for &QuasiPolynomial {
    type Output = QuasiPolynomial;
    fn add(self, o: &QuasiPolynomial) -> QuasiPolynomial {
        QuasiPolynomial::new(self.terms.iter().chain(o.terms.iter()).cloned().collect())
    }
}

impl Sub for &QuasiPolynomial {
    type Output = QuasiPolynomial;
    fn sub(self, o: &QuasiPolynomial) -> QuasiPolynomial {
        self + &o.scale(-1.0)
    }
}

impl Mul for &QuasiPolynomial {
    type Output = QuasiPolynomial;
    fn mul(self, o: &QuasiPolynomial) -> QuasiPolynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * o.terms.len());
        for (p, a) in &self.terms {
            for (q, b) in &o.terms {
                terms.push((p * q, a + b));
            }
        }
        QuasiPolynomial::new(terms)
    }
}
