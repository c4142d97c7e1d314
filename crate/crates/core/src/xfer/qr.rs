//! Symbolic normal form: a matrix of quasi-polynomials over one common quasi-polynomial.

use super::analytic::Analytic;
use super::expr::{Node, TransferExpr};
use super::poly::{Polynomial, QuasiPolynomial};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QrMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major numerators.
    pub num: Vec<QuasiPolynomial>,
    pub den: QuasiPolynomial,
}

impl QrMatrix {
    pub fn scalar(num: QuasiPolynomial, den: QuasiPolynomial) -> Self {
        QrMatrix { rows: 1, cols: 1, num: vec![num], den }
    }

    pub fn entry(&self, i: usize, j: usize) -> &QuasiPolynomial {
        &self.num[i * self.cols + j]
    }

    /// Scale so the principal part of the denominator is monic.
    pub fn normalized(mut self) -> Self {
        let lead = self.den.principal_leading();
        let lead = if lead != 0.0 { lead } else { self.den.terms().first().map(|t| t.0.leading()).unwrap_or(1.0) };
        if lead != 1.0 && lead != 0.0 {
            self.den = self.den.scale(1.0 / lead);
            self.num = self.num.iter().map(|q| q.scale(1.0 / lead)).collect();
        }
        self
    }

    pub fn add(&self, o: &QrMatrix) -> Result<QrMatrix> {
        if (self.rows, self.cols) != (o.rows, o.cols) {
            return Err(Error::DimensionMismatch("quasi-rational sum".into()));
        }
        if self.den == o.den {
            let num = self.num.iter().zip(&o.num).map(|(a, b)| a + b).collect();
            return Ok(QrMatrix { rows: self.rows, cols: self.cols, num, den: self.den.clone() });
        }
        let num = self.num.iter().zip(&o.num).map(|(a, b)| &(a * &o.den) + &(b * &self.den)).collect();
        Ok(QrMatrix { rows: self.rows, cols: self.cols, num, den: &self.den * &o.den }.normalized())
    }

    pub fn scale(&self, c: f64) -> QrMatrix {
        QrMatrix { rows: self.rows, cols: self.cols, num: self.num.iter().map(|q| q.scale(c)).collect(), den: self.den.clone() }
    }

    pub fn mul(&self, o: &QrMatrix) -> Result<QrMatrix> {
        if self.cols != o.rows {
            return Err(Error::DimensionMismatch("quasi-rational product".into()));
        }
        let mut num = Vec::with_capacity(self.rows * o.cols);
        for i in 0..self.rows {
            for j in 0..o.cols {
                let mut acc = QuasiPolynomial::zero();
                for k in 0..self.cols {
                    acc = &acc + &(self.entry(i, k) * o.entry(k, j));
                }
                num.push(acc);
            }
        }
        Ok(QrMatrix { rows: self.rows, cols: o.cols, num, den: &self.den * &o.den }.normalized())
    }

    /// `g (I + sign·k·g)^{-1}` for loops whose loop gain is scalar.
    pub fn feedback(g: &QrMatrix, k: &QrMatrix, sign: f64) -> Result<QrMatrix> {
        if k.rows != g.cols || k.cols != g.rows {
            return Err(Error::DimensionMismatch("quasi-rational feedback".into()));
        }
        // The scalar loop gain numerator is N_k N_g (p = 1) or N_g N_k (m = 1).
        let loop_num = if g.cols == 1 {
            let mut acc = QuasiPolynomial::zero();
            for i in 0..g.rows {
                acc = &acc + &(k.entry(0, i) * g.entry(i, 0));
            }
            acc
        } else if g.rows == 1 {
            let mut acc = QuasiPolynomial::zero();
            for j in 0..g.cols {
                acc = &acc + &(g.entry(0, j) * k.entry(j, 0));
            }
            acc
        } else {
            return Err(Error::NonRealizableController("feedback normal form needs a scalar loop".into()));
        };
        let den = &(&k.den * &g.den) + &loop_num.scale(sign);
        let num = g.num.iter().map(|q| q * &k.den).collect();
        Ok(QrMatrix { rows: g.rows, cols: g.cols, num, den }.normalized())
    }

    pub fn to_expr(&self) -> TransferExpr {
        TransferExpr::quasi_rational(self.rows, self.cols, self.num.clone(), self.den.clone())
            .expect("consistent normal form")
    }

    /// Normal form of an expression built from rational, delay and quasi-rational pieces.
    pub fn from_expr(e: &TransferExpr) -> Result<QrMatrix> {
        let not = |what: &str| Error::NonRealizableController(format!("{what} has no quasi-rational form"));
        match e.node() {
            Node::Gain { rows, cols, values } => Ok(QrMatrix {
                rows: *rows,
                cols: *cols,
                num: values.iter().map(|&v| Polynomial::constant(v).into()).collect(),
                den: QuasiPolynomial::one(),
            }),
            Node::Rational { num, den } => Ok(QrMatrix::scalar(num.clone().into(), den.clone().into()).normalized()),
            Node::Delay { theta } => Ok(QrMatrix::scalar(
                QuasiPolynomial::term(Polynomial::one(), *theta),
                QuasiPolynomial::one(),
            )),
            Node::QuasiRational { rows, cols, num, den } => {
                Ok(QrMatrix { rows: *rows, cols: *cols, num: num.clone(), den: den.clone() }.normalized())
            }
            Node::Analytic { closure: Analytic::DelayDifference { theta } } => Ok(QrMatrix::scalar(
                &QuasiPolynomial::one() - &QuasiPolynomial::term(Polynomial::one(), *theta),
                Polynomial::s().into(),
            )),
            Node::Analytic { .. } => Err(not("analytic closure")),
            Node::StateSpace { .. } => Err(not("state-space node")),
            Node::Sum { a, b } => QrMatrix::from_expr(a)?.add(&QrMatrix::from_expr(b)?),
            Node::Product { a, b } => QrMatrix::from_expr(a)?.mul(&QrMatrix::from_expr(b)?),
            Node::Scale { factor, a } => Ok(QrMatrix::from_expr(a)?.scale(*factor)),
            Node::Feedback { plant, controller, sign } => {
                QrMatrix::feedback(&QrMatrix::from_expr(plant)?, &QrMatrix::from_expr(controller)?, *sign)
            }
            Node::Inverse { a } => {
                let q = QrMatrix::from_expr(a)?;
                if q.rows != 1 {
                    return Err(not("matrix inverse"));
                }
                Ok(QrMatrix::scalar(q.den, q.num[0].clone()).normalized())
            }
            Node::Det { a } => {
                let q = QrMatrix::from_expr(a)?;
                if q.rows != 1 {
                    return Err(not("matrix determinant"));
                }
                Ok(q)
            }
            Node::Block { rows } => {
                let parts: Vec<Vec<QrMatrix>> =
                    rows.iter().map(|r| r.iter().map(QrMatrix::from_expr).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
                // common denominator: product of distinct denominators
                let mut dens: Vec<QuasiPolynomial> = vec![];
                for p in parts.iter().flatten() {
                    if !dens.contains(&p.den) {
                        dens.push(p.den.clone());
                    }
                }
                let common = dens.iter().fold(QuasiPolynomial::one(), |a, d| &a * d);
                let (h, w) = e.dims();
                let mut num = vec![QuasiPolynomial::zero(); h * w];
                let mut r0 = 0;
                for row in &parts {
                    let mut c0 = 0;
                    for p in row {
                        let mut cof = QuasiPolynomial::one();
                        for d in &dens {
                            if *d != p.den {
                                cof = &cof * d;
                            }
                        }
                        for i in 0..p.rows {
                            for j in 0..p.cols {
                                num[(r0 + i) * w + c0 + j] = p.entry(i, j) * &cof;
                            }
                        }
                        c0 += p.cols;
                    }
                    r0 += row[0].rows;
                }
                Ok(QrMatrix { rows: h, cols: w, num, den: common }.normalized())
            }
            Node::Tunable { a, .. } => QrMatrix::from_expr(a),
        }
    }
}
