use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type C = Complex64;
type CMat = DMatrix<C>;

/// Real continuous-time realization `C (sI − A)^{-1} B + D`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    #[serde(skip)]
    modal: OnceLock<Option<Modal>>,
}

/// Eigen-decomposition cache for symmetric `A`.
#[derive(Clone, Debug)]
struct Modal {
    lambda: DVector<f64>,
    cv: DMatrix<f64>,
    vb: DMatrix<f64>,
}

impl PartialEq for StateSpace {
    fn eq(&self, o: &Self) -> bool {
        self.a == o.a && self.b == o.b && self.c == o.c && self.d == o.d
    }
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "state space A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(StateSpace { a, b, c, d, modal: OnceLock::new() })
    }

    /// Controllable canonical realization of a proper SISO ratio.
    pub fn from_tf(num: &super::Polynomial, den: &super::Polynomial) -> Result<Self> {
        if den.is_zero() {
            return Err(Error::InvalidParameter("zero denominator".into()));
        }
        let n = den.degree();
        if num.degree() > n && !num.is_zero() {
            return Err(Error::NonRealizableController("improper ratio".into()));
        }
        let lead = den.leading();
        let a_c: Vec<f64> = den.coeffs().iter().map(|c| c / lead).collect();
        let b_c: Vec<f64> = (0..=n).map(|k| num.coeff(k) / lead).collect();
        let d = b_c[n];
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..n {
            a[(n - 1, j)] = -a_c[j];
        }
        let mut b = DMatrix::zeros(n, 1);
        if n > 0 {
            b[(n - 1, 0)] = 1.0;
        }
        let c = DMatrix::from_fn(1, n, |_, j| b_c[j] - d * a_c[j]);
        StateSpace::new(a, b, c, DMatrix::from_element(1, 1, d))
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    fn modal(&self) -> Option<&Modal> {
        self.modal
            .get_or_init(|| {
                let n = self.order();
                if n == 0 {
                    return None;
                }
                let scale = self.a.amax().max(1.0);
                let sym = (0..n).all(|i| (0..i).all(|j| (self.a[(i, j)] - self.a[(j, i)]).abs() <= 1e-14 * scale));
                if !sym {
                    return None;
                }
                let eig = self.a.clone().symmetric_eigen();
                let v = eig.eigenvectors;
                Some(Modal { lambda: eig.eigenvalues, cv: &self.c * &v, vb: v.transpose() * &self.b })
            })
            .as_ref()
    }

    pub fn poles(&self) -> Vec<C> {
        if let Some(m) = self.modal() {
            return m.lambda.iter().map(|&l| C::new(l, 0.0)).collect();
        }
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn eval_with_deriv(&self, s: C, want_d: bool) -> Result<(CMat, Option<CMat>)> {
        let (p, m) = (self.outputs(), self.inputs());
        let dc = self.d.map(|x| C::new(x, 0.0));
        if self.order() == 0 {
            return Ok((dc, want_d.then(|| CMat::zeros(p, m))));
        }
        if let Some(md) = self.modal() {
            let n = self.order();
            let mut inv = Vec::with_capacity(n);
            for k in 0..n {
                let den = s - md.lambda[k];
                if den.norm() == 0.0 {
                    return Err(Error::singular(s));
                }
                inv.push(1.0 / den);
            }
            let mut val = dc;
            let mut der = want_d.then(|| CMat::zeros(p, m));
            for i in 0..p {
                for j in 0..m {
                    let mut acc = C::new(0.0, 0.0);
                    let mut dacc = C::new(0.0, 0.0);
                    for k in 0..n {
                        let w = md.cv[(i, k)] * md.vb[(k, j)];
                        if w != 0.0 {
                            acc += inv[k] * w;
                            if want_d {
                                dacc -= inv[k] * inv[k] * w;
                            }
                        }
                    }
                    val[(i, j)] += acc;
                    if let Some(d) = der.as_mut() {
                        d[(i, j)] = dacc;
                    }
                }
            }
            return Ok((val, der));
        }
        let n = self.order();
        let mut res = self.a.map(|x| C::new(-x, 0.0));
        for k in 0..n {
            res[(k, k)] += s;
        }
        let lu = res.lu();
        let bc = self.b.map(|x| C::new(x, 0.0));
        let cc = self.c.map(|x| C::new(x, 0.0));
        let x = lu.solve(&bc).ok_or_else(|| Error::singular(s))?;
        let val = &cc * &x + dc;
        let der = if want_d {
            let y = lu.solve(&x).ok_or_else(|| Error::singular(s))?;
            Some(-(&cc * y))
        } else {
            None
        };
        if val.iter().any(|z| !z.is_finite()) {
            return Err(Error::singular(s));
        }
        Ok((val, der))
    }

    /// Sup of ‖H(jν)‖ over `ν ≥ ω`.
    pub fn high_frequency_bound(&self, omega: f64) -> Option<f64> {
        let dn = self.d.norm();
        if self.order() == 0 {
            return Some(dn);
        }
        if let Some(md) = self.modal() {
            if omega <= 0.0 {
                return None;
            }
            // |jν − λ| ≥ ν for real λ
            return Some(md.cv.norm() * md.vb.norm() / omega + dn);
        }
        let an = induced_two_norm_bound(&self.a);
        if omega <= an {
            return None;
        }
        // (sI − A)^{-1} = Σ_{j<k} A^j/s^{j+1} + A^k (sI − A)^{-1}/s^k
        let bn = self.b.norm();
        let mut best = self.c.norm() * bn / (omega - an);
        let mut cak = self.c.clone();
        let mut head = 0.0;
        for k in 1..=4 {
            head += (&cak * &self.b).norm() / omega.powi(k);
            cak = &cak * &self.a;
            best = best.min(head + cak.norm() * bn / (omega.powi(k) * (omega - an)));
        }
        Some(best + dn)
    }
}

/// `‖A‖₂ ≤ sqrt(‖A‖₁ ‖A‖∞)`, capped by the Frobenius norm.
fn induced_two_norm_bound(a: &DMatrix<f64>) -> f64 {
    let n1 = (0..a.ncols()).map(|j| a.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    let ni = (0..a.nrows()).map(|i| a.row(i).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    (n1 * ni).sqrt().min(a.norm())
}
