use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::analytic::Analytic;
use super::poly::{Polynomial, QuasiPolynomial};
use super::statespace::StateSpace;
use crate::error::{Error, Result};

pub type C = Complex64;
pub type CMat = DMatrix<C>;

/// Node of a transfer-matrix expression tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Constant real matrix, row-major.
    Gain { rows: usize, cols: usize, values: Vec<f64> },
    Rational { num: Polynomial, den: Polynomial },
    Delay { theta: f64 },
    /// Matrix of quasi-polynomial numerators over one quasi-polynomial denominator, row-major.
    QuasiRational { rows: usize, cols: usize, num: Vec<QuasiPolynomial>, den: QuasiPolynomial },
    Analytic { closure: Analytic },
    StateSpace { system: StateSpace },
    Sum { a: TransferExpr, b: TransferExpr },
    Product { a: TransferExpr, b: TransferExpr },
    /// `plant (I + sign · controller · plant)^{-1}`.
    Feedback { plant: TransferExpr, controller: TransferExpr, sign: f64 },
    Inverse { a: TransferExpr },
    Det { a: TransferExpr },
    Scale { factor: f64, a: TransferExpr },
    Block { rows: Vec<Vec<TransferExpr>> },
    /// Marks a subexpression whose parameter tangents are supplied at evaluation time.
    Tunable { id: usize, a: TransferExpr },
}

/// Immutable, cheaply clonable transfer-matrix expression.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferExpr {
    node: Arc<Node>,
    rows: usize,
    cols: usize,
}

impl Serialize for TransferExpr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.node.serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransferExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let node = Node::deserialize(d)?;
        TransferExpr::from_node(node).map_err(serde::de::Error::custom)
    }
}

/// What the derivative slot of a dual evaluation carries.
pub enum Seed<'a> {
    Value,
    DerivS,
    /// Tangent with respect to a parameter: for each `Tunable` id, the derivative of that
    /// subexpression at `s` (or `None` when it does not depend on the parameter).
    Tangent(&'a dyn Fn(usize, C) -> Result<Option<CMat>>),
}

type Dual = (CMat, Option<CMat>);

fn opt_add(a: Option<CMat>, b: Option<CMat>) -> Option<CMat> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x + y),
        (x, None) => x,
        (None, y) => y,
    }
}

fn check_finite(m: &CMat, s: C) -> Result<()> {
    if m.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(Error::singular(s))
    }
}

fn invert(m: CMat, s: C) -> Result<CMat> {
    if m.nrows() == 1 {
        let z = m[(0, 0)];
        if z.norm() == 0.0 {
            return Err(Error::singular(s));
        }
        return Ok(CMat::from_element(1, 1, 1.0 / z));
    }
    let inv = m.try_inverse().ok_or_else(|| Error::singular(s))?;
    check_finite(&inv, s)?;
    Ok(inv)
}

fn dim_err<T>(msg: String) -> Result<T> {
    Err(Error::DimensionMismatch(msg))
}

impl TransferExpr {
    pub fn from_node(node: Node) -> Result<Self> {
        let (rows, cols) = match &node {
            Node::Gain { rows, cols, values } => {
                if values.len() != rows * cols {
                    return dim_err(format!("gain {rows}x{cols} with {} values", values.len()));
                }
                (*rows, *cols)
            }
            Node::Rational { den, .. } => {
                if den.is_zero() {
                    return Err(Error::InvalidParameter("zero denominator".into()));
                }
                (1, 1)
            }
            Node::Delay { theta } => {
                if !(theta.is_finite() && *theta >= 0.0) {
                    return Err(Error::InvalidParameter(format!("delay {theta}")));
                }
                (1, 1)
            }
            Node::QuasiRational { rows, cols, num, den } => {
                if num.len() != rows * cols {
                    return dim_err(format!("quasi-rational {rows}x{cols} with {} entries", num.len()));
                }
                if den.is_zero() {
                    return Err(Error::InvalidParameter("zero denominator".into()));
                }
                (*rows, *cols)
            }
            Node::Analytic { .. } => (1, 1),
            Node::StateSpace { system } => (system.outputs(), system.inputs()),
            Node::Sum { a, b } => {
                if a.dims() != b.dims() {
                    return dim_err(format!("sum of {:?} and {:?}", a.dims(), b.dims()));
                }
                a.dims()
            }
            Node::Product { a, b } => {
                if a.cols != b.rows {
                    return dim_err(format!("product of {:?} and {:?}", a.dims(), b.dims()));
                }
                (a.rows, b.cols)
            }
            Node::Feedback { plant, controller, .. } => {
                if controller.rows != plant.cols || controller.cols != plant.rows {
                    return dim_err(format!("feedback of {:?} with {:?}", plant.dims(), controller.dims()));
                }
                plant.dims()
            }
            Node::Inverse { a } => {
                if a.rows != a.cols {
                    return dim_err(format!("inverse of {:?}", a.dims()));
                }
                a.dims()
            }
            Node::Det { a } => {
                if a.rows != a.cols {
                    return dim_err(format!("determinant of {:?}", a.dims()));
                }
                (1, 1)
            }
            Node::Scale { a, .. } => a.dims(),
            Node::Block { rows } => {
                if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
                    return dim_err("empty block".into());
                }
                let width: usize = rows[0].iter().map(|e| e.cols).sum();
                let mut height = 0;
                for r in rows {
                    let h = r[0].rows;
                    if r.iter().any(|e| e.rows != h) || r.iter().map(|e| e.cols).sum::<usize>() != width {
                        return dim_err("ragged block".into());
                    }
                    height += h;
                }
                (height, width)
            }
            Node::Tunable { a, .. } => a.dims(),
        };
        Ok(TransferExpr { node: Arc::new(node), rows, cols })
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn gain(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Self::from_node(Node::Gain { rows, cols, values })
    }

    pub fn constant(c: f64) -> Self {
        Self::gain(1, 1, vec![c]).expect("scalar gain")
    }

    pub fn identity(n: usize) -> Self {
        let mut v = vec![0.0; n * n];
        for k in 0..n {
            v[k * n + k] = 1.0;
        }
        Self::gain(n, n, v).expect("identity")
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::gain(rows, cols, vec![0.0; rows * cols]).expect("zeros")
    }

    pub fn rational(num: Polynomial, den: Polynomial) -> Result<Self> {
        Self::from_node(Node::Rational { num, den })
    }

    pub fn delay(theta: f64) -> Result<Self> {
        Self::from_node(Node::Delay { theta })
    }

    pub fn quasi_rational(rows: usize, cols: usize, num: Vec<QuasiPolynomial>, den: QuasiPolynomial) -> Result<Self> {
        Self::from_node(Node::QuasiRational { rows, cols, num, den })
    }

    pub fn analytic(closure: Analytic) -> Self {
        Self::from_node(Node::Analytic { closure }).expect("scalar closure")
    }

    pub fn state_space(system: StateSpace) -> Self {
        Self::from_node(Node::StateSpace { system }).expect("validated system")
    }

    pub fn add(&self, o: &TransferExpr) -> Result<Self> {
        Self::from_node(Node::Sum { a: self.clone(), b: o.clone() })
    }

    pub fn sub(&self, o: &TransferExpr) -> Result<Self> {
        self.add(&o.scale(-1.0))
    }

    /// Matrix product `self · o`.
    pub fn mul(&self, o: &TransferExpr) -> Result<Self> {
        Self::from_node(Node::Product { a: self.clone(), b: o.clone() })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self::from_node(Node::Scale { factor, a: self.clone() }).expect("scale keeps dims")
    }

    /// `plant (I + sign · controller · plant)^{-1}`; `sign = 1` is negative feedback.
    pub fn feedback(plant: &TransferExpr, controller: &TransferExpr, sign: f64) -> Result<Self> {
        Self::from_node(Node::Feedback { plant: plant.clone(), controller: controller.clone(), sign })
    }

    pub fn inverse(&self) -> Result<Self> {
        Self::from_node(Node::Inverse { a: self.clone() })
    }

    pub fn det(&self) -> Result<Self> {
        Self::from_node(Node::Det { a: self.clone() })
    }

    pub fn block(rows: Vec<Vec<TransferExpr>>) -> Result<Self> {
        Self::from_node(Node::Block { rows })
    }

    pub fn hstack(items: Vec<TransferExpr>) -> Result<Self> {
        Self::block(vec![items])
    }

    pub fn vstack(items: Vec<TransferExpr>) -> Result<Self> {
        Self::block(items.into_iter().map(|e| vec![e]).collect())
    }

    pub fn tunable(id: usize, a: &TransferExpr) -> Self {
        Self::from_node(Node::Tunable { id, a: a.clone() }).expect("tunable keeps dims")
    }

    pub fn eval(&self, s: C) -> Result<CMat> {
        Ok(self.dual(s, &Seed::Value)?.0)
    }

    /// Scalar value of a 1×1 expression.
    pub fn eval_scalar(&self, s: C) -> Result<C> {
        debug_assert_eq!(self.dims(), (1, 1));
        Ok(self.eval(s)?[(0, 0)])
    }

    pub fn eval_deriv(&self, s: C) -> Result<CMat> {
        Ok(self.eval_with_deriv(s)?.1)
    }

    pub fn eval_with_deriv(&self, s: C) -> Result<(CMat, CMat)> {
        let (v, d) = self.dual(s, &Seed::DerivS)?;
        let d = d.unwrap_or_else(|| CMat::zeros(self.rows, self.cols));
        Ok((v, d))
    }

    /// Value and parameter tangent, the tangent seeded at `Tunable` nodes.
    pub fn eval_tangent(&self, s: C, seed: &dyn Fn(usize, C) -> Result<Option<CMat>>) -> Result<(CMat, CMat)> {
        let (v, d) = self.dual(s, &Seed::Tangent(seed))?;
        let d = d.unwrap_or_else(|| CMat::zeros(self.rows, self.cols));
        Ok((v, d))
    }

    /// Forward-mode evaluation shared by value, s-derivative and parameter tangents.
    pub fn dual(&self, s: C, seed: &Seed) -> Result<Dual> {
        let want_s = matches!(seed, Seed::DerivS);
        let want_any = !matches!(seed, Seed::Value);
        let scalar = |v: C, d: C| -> Dual {
            (CMat::from_element(1, 1, v), want_s.then(|| CMat::from_element(1, 1, d)))
        };
        match &*self.node {
            Node::Gain { rows, cols, values } => {
                Ok((CMat::from_row_iterator(*rows, *cols, values.iter().map(|&x| C::new(x, 0.0))), None))
            }
            Node::Rational { num, den } => {
                let (n, dn) = num.eval_with_deriv(s);
                let (d, dd) = den.eval_with_deriv(s);
                if d.norm() == 0.0 {
                    let (v, dv) = removable(&num.clone().into(), &den.clone().into(), s)?;
                    return Ok(scalar(v, dv));
                }
                let v = n / d;
                if !v.is_finite() {
                    return Err(Error::singular(s));
                }
                Ok(scalar(v, (dn - v * dd) / d))
            }
            Node::Delay { theta } => {
                let e = (-s * *theta).exp();
                Ok(scalar(e, -e * *theta))
            }
            Node::QuasiRational { rows, cols, num, den } => {
                let (d, dd) = den.eval_with_deriv(s);
                let mut v = CMat::zeros(*rows, *cols);
                let mut dv = CMat::zeros(*rows, *cols);
                for i in 0..*rows {
                    for j in 0..*cols {
                        let n = &num[i * cols + j];
                        (v[(i, j)], dv[(i, j)]) = if d.norm() == 0.0 {
                            removable(n, den, s)?
                        } else {
                            let (n, dn) = n.eval_with_deriv(s);
                            let q = n / d;
                            (q, (dn - q * dd) / d)
                        };
                    }
                }
                check_finite(&v, s)?;
                Ok((v, want_s.then_some(dv)))
            }
            Node::Analytic { closure } => {
                let (v, d) = if want_s { closure.eval_with_deriv(s) } else { (closure.eval(s), C::new(0.0, 0.0)) };
                if !v.is_finite() {
                    return Err(Error::singular(s));
                }
                Ok(scalar(v, d))
            }
            Node::StateSpace { system } => {
                let (v, d) = system.eval_with_deriv(s, want_s)?;
                Ok((v, d))
            }
            Node::Sum { a, b } => {
                let (va, da) = a.dual(s, seed)?;
                let (vb, db) = b.dual(s, seed)?;
                Ok((va + vb, opt_add(da, db)))
            }
            Node::Product { a, b } => {
                let (va, da) = a.dual(s, seed)?;
                let (vb, db) = b.dual(s, seed)?;
                let d = opt_add(da.map(|x| x * &vb), db.map(|x| &va * x));
                Ok((va * vb, d))
            }
            Node::Scale { factor, a } => {
                let (v, d) = a.dual(s, seed)?;
                Ok((v * C::new(*factor, 0.0), d.map(|x| x * C::new(*factor, 0.0))))
            }
            Node::Feedback { plant, controller, sign } => {
                let sg = C::new(*sign, 0.0);
                let (g, dg) = plant.dual(s, seed)?;
                let (k, dk) = controller.dual(s, seed)?;
                let (m, p) = (g.nrows(), g.ncols());
                if p <= m {
                    let mm = CMat::identity(p, p) + &k * &g * sg;
                    let minv = invert(mm, s)?;
                    let v = &g * &minv;
                    let d = if want_any && (dg.is_some() || dk.is_some()) {
                        let dm = opt_add(dk.as_ref().map(|x| x * &g), dg.as_ref().map(|x| &k * x)).map(|x| x * sg);
                        let mut t = dg.clone().unwrap_or_else(|| CMat::zeros(m, p));
                        if let Some(dm) = dm {
                            t -= &v * dm;
                        }
                        Some(t * &minv)
                    } else {
                        None
                    };
                    Ok((v, d))
                } else {
                    let nn = CMat::identity(m, m) + &g * &k * sg;
                    let ninv = invert(nn, s)?;
                    let v = &ninv * &g;
                    let d = if want_any && (dg.is_some() || dk.is_some()) {
                        let dn = opt_add(dg.as_ref().map(|x| x * &k), dk.as_ref().map(|x| &g * x)).map(|x| x * sg);
                        let mut t = dg.clone().unwrap_or_else(|| CMat::zeros(m, p));
                        if let Some(dn) = dn {
                            t -= dn * &v;
                        }
                        Some(&ninv * t)
                    } else {
                        None
                    };
                    Ok((v, d))
                }
            }
            Node::Inverse { a } => {
                let (va, da) = a.dual(s, seed)?;
                let v = invert(va, s)?;
                let d = da.map(|x| -(&v * x * &v));
                Ok((v, d))
            }
            Node::Det { a } => {
                let (va, da) = a.dual(s, seed)?;
                if va.nrows() == 1 {
                    return Ok((va, da));
                }
                let det = va.clone().lu().determinant();
                let d = match da {
                    Some(x) => {
                        let inv = invert(va, s)?;
                        Some(CMat::from_element(1, 1, det * (inv * x).trace()))
                    }
                    None => None,
                };
                Ok((CMat::from_element(1, 1, det), d))
            }
            Node::Block { rows } => {
                let mut v = CMat::zeros(self.rows, self.cols);
                let mut d: Option<CMat> = None;
                let mut r0 = 0;
                for row in rows {
                    let mut c0 = 0;
                    for e in row {
                        let (ve, de) = e.dual(s, seed)?;
                        v.view_mut((r0, c0), (e.rows, e.cols)).copy_from(&ve);
                        if let Some(de) = de {
                            d.get_or_insert_with(|| CMat::zeros(self.rows, self.cols))
                                .view_mut((r0, c0), (e.rows, e.cols))
                                .copy_from(&de);
                        }
                        c0 += e.cols;
                    }
                    r0 += row[0].rows;
                }
                Ok((v, d))
            }
            Node::Tunable { id, a } => match seed {
                Seed::Tangent(f) => {
                    let v = a.eval(s)?;
                    Ok((v, f(*id, s)?))
                }
                _ => a.dual(s, seed),
            },
        }
    }

    /// Upper bound on `‖self(jν)‖₂` valid for all `ν ≥ ω`, when one follows from structure.
    pub fn high_frequency_bound(&self, omega: f64) -> Option<f64> {
        match &*self.node {
            Node::Gain { values, .. } => Some(values.iter().map(|x| x * x).sum::<f64>().sqrt()),
            Node::Rational { num, den } => rational_tail(num, den, omega),
            Node::Delay { .. } => Some(1.0),
            Node::QuasiRational { num, den, .. } => {
                let mut acc = 0.0;
                for n in num {
                    let b = quasi_rational_tail(n, den, omega)?;
                    acc += b * b;
                }
                Some(acc.sqrt())
            }
            Node::Analytic { closure } => closure.high_frequency_bound(omega),
            Node::StateSpace { system } => system.high_frequency_bound(omega),
            Node::Sum { a, b } => Some(a.high_frequency_bound(omega)? + b.high_frequency_bound(omega)?),
            Node::Product { a, b } => {
                let coarse = a.high_frequency_bound(omega).zip(b.high_frequency_bound(omega)).map(|(x, y)| x * y);
                let fine = a.entry_bounds(omega).zip(b.entry_bounds(omega)).map(|(x, y)| (x * y).norm());
                match (coarse, fine) {
                    (Some(c), Some(f)) => Some(c.min(f)),
                    (c, f) => c.or(f),
                }
            }
            Node::Scale { factor, a } => Some(factor.abs() * a.high_frequency_bound(omega)?),
            Node::Feedback { plant, controller, .. } => {
                let (bg, eps) = loop_gain_bound(plant, controller, omega)?;
                Some(bg / (1.0 - eps))
            }
            Node::Inverse { a } => {
                // (M + X)^{-1} with constant invertible M
                let (m, x) = match a.node() {
                    Node::Sum { a: p, b: q } => match (p.node(), q.node()) {
                        (Node::Gain { .. }, _) => (p, q),
                        (_, Node::Gain { .. }) => (q, p),
                        _ => return None,
                    },
                    _ => return None,
                };
                let Node::Gain { rows, cols, values } = m.node() else { return None };
                let inv = DMatrix::from_row_slice(*rows, *cols, values).try_inverse()?;
                let mi = inv.norm();
                let bx = x.high_frequency_bound(omega)?;
                (mi * bx < 1.0).then(|| mi / (1.0 - mi * bx))
            }
            Node::Det { a } => {
                if a.rows == 1 {
                    a.high_frequency_bound(omega)
                } else {
                    None
                }
            }
            Node::Block { rows } => {
                let mut acc = 0.0;
                for r in rows {
                    for e in r {
                        let b = e.high_frequency_bound(omega)?;
                        acc += b * b;
                    }
                }
                Some(acc.sqrt())
            }
            Node::Tunable { a, .. } => a.high_frequency_bound(omega),
        }
    }

    /// Row-major `(num, den)` entries when every entry is an explicit ratio of polynomials.
    pub fn rational_entries(&self) -> Option<Vec<(Polynomial, Polynomial)>> {
        let (r, c) = self.dims();
        match &*self.node {
            Node::Gain { values, .. } => Some(values.iter().map(|&v| (Polynomial::constant(v), Polynomial::one())).collect()),
            Node::Rational { num, den } => Some(vec![(num.clone(), den.clone())]),
            Node::Scale { factor, a } => {
                Some(a.rational_entries()?.into_iter().map(|(n, d)| (n.scale(*factor), d)).collect())
            }
            Node::Tunable { a, .. } => a.rational_entries(),
            Node::Sum { a, b } => {
                let pairs = a.rational_entries()?.into_iter().zip(b.rational_entries()?);
                Some(pairs.map(|((na, da), (nb, db))| ratio_sum(&na, &da, &nb, &db)).collect())
            }
            Node::Block { rows } => {
                let mut out = vec![(Polynomial::zero(), Polynomial::one()); r * c];
                let mut i0 = 0;
                for row in rows {
                    let mut j0 = 0;
                    for e in row {
                        let ent = e.rational_entries()?;
                        for i in 0..e.rows {
                            for j in 0..e.cols {
                                out[(i0 + i) * c + j0 + j] = ent[i * e.cols + j].clone();
                            }
                        }
                        j0 += e.cols;
                    }
                    i0 += row[0].rows;
                }
                Some(out)
            }
            _ => None,
        }
    }

    /// `self − o` with all explicitly rational summands merged entry-wise into single ratios.
    ///
    /// Same values as [`TransferExpr::sub`]; the merged form has much tighter high-frequency bounds.
    pub fn sub_merged(&self, o: &TransferExpr) -> Result<Self> {
        let (r, c) = self.dims();
        let mut terms = vec![];
        self.summands(1.0, &mut terms);
        o.summands(-1.0, &mut terms);
        let mut merged: Option<Vec<(Polynomial, Polynomial)>> = None;
        let mut rest: Option<TransferExpr> = None;
        for t in terms {
            if t.dims() != (r, c) {
                return self.sub(o);
            }
            match t.rational_entries() {
                Some(e) => {
                    merged = Some(match merged {
                        None => e,
                        Some(m) => m.iter().zip(&e).map(|((na, da), (nb, db))| ratio_sum(na, da, nb, db)).collect(),
                    })
                }
                None => rest = Some(match rest {
                    None => t,
                    Some(x) => x.add(&t)?,
                }),
            }
        }
        let merged = match merged {
            Some(ent) => {
                let cells = ent
                    .into_iter()
                    .map(|(n, d)| {
                        if n.is_zero() {
                            Ok(TransferExpr::constant(0.0))
                        } else if d.degree() == 0 && n.degree() == 0 {
                            Ok(TransferExpr::constant(n.coeff(0) / d.coeff(0)))
                        } else {
                            TransferExpr::rational(n, d)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                Some(TransferExpr::block(cells.chunks(c).map(|row| row.to_vec()).collect())?)
            }
            None => None,
        };
        match (merged, rest) {
            (Some(m), Some(x)) => m.add(&x),
            (Some(m), None) => Ok(m),
            (None, Some(x)) => Ok(x),
            (None, None) => Ok(TransferExpr::zeros(r, c)),
        }
    }

    /// Flattens nested sums and scalings into `factor`-weighted summands.
    fn summands(&self, factor: f64, out: &mut Vec<TransferExpr>) {
        match &*self.node {
            Node::Sum { a, b } => {
                a.summands(factor, out);
                b.summands(factor, out);
            }
            Node::Scale { factor: f, a } => a.summands(factor * f, out),
            _ => out.push(if factor == 1.0 { self.clone() } else { self.scale(factor) }),
        }
    }

    /// Entry-wise bounds `|T_ij(jν)|` for `ν ≥ ω`; entries of opaque nodes take the norm bound.
    pub fn entry_bounds(&self, omega: f64) -> Option<DMatrix<f64>> {
        let (r, c) = self.dims();
        match &*self.node {
            Node::Gain { values, .. } => Some(DMatrix::from_row_slice(r, c, values).abs()),
            Node::Rational { num, den } => rational_tail(num, den, omega).map(|b| DMatrix::from_element(1, 1, b)),
            Node::Delay { .. } => Some(DMatrix::from_element(1, 1, 1.0)),
            Node::QuasiRational { num, den, .. } => {
                let v = num.iter().map(|n| quasi_rational_tail(n, den, omega)).collect::<Option<Vec<_>>>()?;
                Some(DMatrix::from_row_slice(r, c, &v))
            }
            Node::Sum { a, b } => Some(a.entry_bounds(omega)? + b.entry_bounds(omega)?),
            Node::Product { a, b } => Some(a.entry_bounds(omega)? * b.entry_bounds(omega)?),
            Node::Scale { factor, a } => Some(a.entry_bounds(omega)? * factor.abs()),
            Node::Tunable { a, .. } => a.entry_bounds(omega),
            Node::Feedback { plant, controller, .. } => {
                // (I + PC)^{-1}P = P − PC(I + PC)^{-1}P
                let (bg, eps) = loop_gain_bound(plant, controller, omega)?;
                let base = plant.entry_bounds(omega).unwrap_or_else(|| DMatrix::from_element(r, c, bg));
                Some(base.add_scalar(bg * eps / (1.0 - eps)))
            }
            Node::Block { rows } => {
                let mut m = DMatrix::zeros(r, c);
                let mut i0 = 0;
                for row in rows {
                    let mut j0 = 0;
                    for e in row {
                        m.view_mut((i0, j0), e.dims()).copy_from(&e.entry_bounds(omega)?);
                        j0 += e.cols;
                    }
                    i0 += row[0].rows;
                }
                Some(m)
            }
            _ => self.high_frequency_bound(omega).map(|b| DMatrix::from_element(r, c, b)),
        }
    }

    /// Ids of all `Tunable` nodes.
    pub fn tunable_ids(&self) -> Vec<usize> {
        let mut out = vec![];
        self.visit(&mut |n| {
            if let Node::Tunable { id, .. } = n {
                if !out.contains(id) {
                    out.push(*id);
                }
            }
        });
        out
    }

    /// True when the expression has no delays, closures or quasi-polynomials.
    pub fn is_rational(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |n| match n {
            Node::Delay { theta } if *theta > 0.0 => ok = false,
            Node::Analytic { .. } => ok = false,
            Node::QuasiRational { num, den, .. }
                if !den.is_polynomial() || num.iter().any(|q| !q.is_polynomial()) =>
            {
                ok = false
            }
            _ => {}
        });
        ok
    }

    fn visit(&self, f: &mut dyn FnMut(&Node)) {
        f(&self.node);
        match &*self.node {
            Node::Sum { a, b } | Node::Product { a, b } => {
                a.visit(f);
                b.visit(f);
            }
            Node::Feedback { plant, controller, .. } => {
                plant.visit(f);
                controller.visit(f);
            }
            Node::Inverse { a } | Node::Det { a } | Node::Scale { a, .. } | Node::Tunable { a, .. } => a.visit(f),
            Node::Block { rows } => rows.iter().flatten().for_each(|e| e.visit(f)),
            _ => {}
        }
    }
}

/// `(‖P‖, ε)` with `ε < 1` bounding both loop orders `‖CP‖` and `‖PC‖` beyond `ω`.
fn loop_gain_bound(plant: &TransferExpr, controller: &TransferExpr, omega: f64) -> Option<(f64, f64)> {
    let bg = plant.high_frequency_bound(omega)?;
    let mut eps = controller.high_frequency_bound(omega).map_or(f64::INFINITY, |bk| bg * bk);
    if let (Some(p), Some(k)) = (plant.entry_bounds(omega), controller.entry_bounds(omega)) {
        eps = eps.min((&k * &p).norm()).min((&p * &k).norm());
    }
    (eps < 1.0).then_some((bg, eps))
}

/// Value and derivative of `n/d` at a simple common zero `s₀` (l'Hôpital); other zeros of `d` are poles.
fn removable(n: &QuasiPolynomial, d: &QuasiPolynomial, s: C) -> Result<(C, C)> {
    let (nv, n1) = n.eval_with_deriv(s);
    let (_, d1) = d.eval_with_deriv(s);
    if nv.norm() != 0.0 || d1.norm() == 0.0 {
        return Err(Error::singular(s));
    }
    let n2 = n.derivative().eval_with_deriv(s).1;
    let d2 = d.derivative().eval_with_deriv(s).1;
    Ok((n1 / d1, (n2 * d1 - n1 * d2) / (2.0 * d1 * d1)))
}

/// `na/da + nb/db`, sharing the denominator when it is the same polynomial.
fn ratio_sum(na: &Polynomial, da: &Polynomial, nb: &Polynomial, db: &Polynomial) -> (Polynomial, Polynomial) {
    if nb.is_zero() {
        (na.clone(), da.clone())
    } else if na.is_zero() {
        (nb.clone(), db.clone())
    } else if da == db {
        (na + nb, da.clone())
    } else {
        (&(na * db) + &(nb * da), da * db)
    }
}

/// Sup over `ν ≥ ω ≥ 1` of `|n(jν)/d(jν)|` for a proper ratio.
fn rational_tail(num: &Polynomial, den: &Polynomial, omega: f64) -> Option<f64> {
    if omega < 1.0 || num.degree() > den.degree() {
        return None;
    }
    if num.is_zero() {
        return Some(0.0);
    }
    let n = den.degree() as i32;
    let top = num.abs_weighted(omega, n);
    let bottom = den.leading().abs() - Polynomial::new(den.coeffs()[..n as usize].to_vec()).abs_weighted(omega, n);
    (bottom > 0.0).then(|| top / bottom)
}

fn quasi_rational_tail(num: &QuasiPolynomial, den: &QuasiPolynomial, omega: f64) -> Option<f64> {
    let p0 = den.principal();
    if omega < 1.0 || p0.is_zero() {
        return None;
    }
    let n = p0.degree() as i32;
    if den.max_degree() as i32 > n || num.max_degree() as i32 > n {
        return None;
    }
    let top: f64 = num.terms().iter().map(|(p, _)| p.abs_weighted(omega, n)).sum();
    let mut bottom = p0.leading().abs() - Polynomial::new(p0.coeffs()[..n as usize].to_vec()).abs_weighted(omega, n);
    for (p, d) in den.terms() {
        if *d > 0.0 {
            bottom -= p.abs_weighted(omega, n);
        }
    }
    (bottom > 0.0).then(|| top / bottom)
}
