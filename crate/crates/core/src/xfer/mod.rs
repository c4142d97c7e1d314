//! Irrational transfer matrices: construction, interconnection and evaluation with derivatives.

mod analytic;
mod expr;
mod poly;
mod qr;
mod statespace;

pub use analytic::Analytic;
pub use expr::{CMat, Node, Seed, TransferExpr, C};
pub use poly::{Polynomial, QuasiPolynomial};
pub use qr::QrMatrix;
pub use statespace::StateSpace;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaginary-axis pole `±jω` (or the origin when `ω = 0`) of a given order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisPole {
    pub omega: f64,
    pub order: u32,
}

/// Declared pole data of an open loop, needed by the Nyquist test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RhpPoleInfo {
    /// Poles in the open right half-plane, with multiplicity.
    pub n_p: usize,
    /// Axis poles; each `ω > 0` entry stands for the pair `±jω`.
    pub axis_poles: Vec<AxisPole>,
    /// Largest modulus of any declared pole or zero, used to place the cutoff.
    pub frequency_scale: f64,
}

impl RhpPoleInfo {
    pub fn stable() -> Self {
        RhpPoleInfo::default()
    }

    pub fn with_unstable(n_p: usize, frequency_scale: f64) -> Self {
        RhpPoleInfo { n_p, axis_poles: vec![], frequency_scale }
    }

    /// Number of axis poles counted with multiplicity (pairs count twice).
    pub fn axis_pole_count(&self) -> usize {
        self.axis_poles
            .iter()
            .map(|p| if p.omega == 0.0 { p.order as usize } else { 2 * p.order as usize })
            .sum()
    }

    /// `N_p = n_p + axis poles`.
    pub fn total(&self) -> usize {
        self.n_p + self.axis_pole_count()
    }

    /// Combine the pole data of two open-loop factors.
    pub fn merge(&self, o: &RhpPoleInfo) -> RhpPoleInfo {
        let mut axis = self.axis_poles.clone();
        for p in &o.axis_poles {
            match axis.iter_mut().find(|q| q.omega == p.omega) {
                Some(q) => q.order += p.order,
                None => axis.push(*p),
            }
        }
        RhpPoleInfo { n_p: self.n_p + o.n_p, axis_poles: axis, frequency_scale: self.frequency_scale.max(o.frequency_scale) }
    }

    pub fn validate(&self) -> Result<()> {
        for p in &self.axis_poles {
            if !(p.omega.is_finite() && p.omega >= 0.0) || p.order == 0 {
                return Err(Error::InvalidParameter(format!("axis pole {p:?}")));
            }
        }
        Ok(())
    }
}

/// Blocks of the closed loop of `G` (m×p) and `K` (p×m) under `u = −K y`.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    /// `(I + K G)^{-1}`, p×p.
    pub input_sensitivity: TransferExpr,
    /// `(I + G K)^{-1}`, m×m.
    pub sensitivity: TransferExpr,
    /// `−K (I + G K)^{-1}`.
    pub control: TransferExpr,
    /// `(I + G K)^{-1} G`.
    pub plant_sensitivity: TransferExpr,
    /// `[[(I+KG)^{-1}, −K(I+GK)^{-1}], [(I+GK)^{-1}G, (I+GK)^{-1}]]`.
    pub t: TransferExpr,
}

pub fn closed_loop(g: &TransferExpr, k: &TransferExpr) -> Result<ClosedLoop> {
    let (m, p) = g.dims();
    if k.dims() != (p, m) {
        return Err(Error::DimensionMismatch(format!("G {:?} with K {:?}", g.dims(), k.dims())));
    }
    let input_sensitivity = TransferExpr::identity(p).add(&k.mul(g)?)?.inverse()?;
    let sensitivity = TransferExpr::identity(m).add(&g.mul(k)?)?.inverse()?;
    let control = k.mul(&sensitivity)?.scale(-1.0);
    let plant_sensitivity = sensitivity.mul(g)?;
    let t = TransferExpr::block(vec![
        vec![input_sensitivity.clone(), control.clone()],
        vec![plant_sensitivity.clone(), sensitivity.clone()],
    ])?;
    Ok(ClosedLoop { input_sensitivity, sensitivity, control, plant_sensitivity, t })
}

/// `f = det(I + G K)`, evaluated through the smaller of the two equivalent determinants.
pub fn return_difference(g: &TransferExpr, k: &TransferExpr) -> Result<TransferExpr> {
    let (m, p) = g.dims();
    if k.dims() != (p, m) {
        return Err(Error::DimensionMismatch(format!("G {:?} with K {:?}", g.dims(), k.dims())));
    }
    if p <= m {
        TransferExpr::identity(p).add(&k.mul(g)?)?.det()
    } else {
        TransferExpr::identity(m).add(&g.mul(k)?)?.det()
    }
}

/// Regularizing factor `h` with zeros at the declared axis poles (β = 1).
pub fn regularizer(axis_poles: &[AxisPole]) -> Option<TransferExpr> {
    let mut num = Polynomial::one();
    let mut den = Polynomial::one();
    for p in axis_poles {
        for _ in 0..p.order {
            if p.omega == 0.0 {
                num = &num * &Polynomial::s();
                den = &den * &Polynomial::new(vec![1.0, 1.0]);
            } else {
                num = &num * &Polynomial::new(vec![p.omega * p.omega, 0.0, 1.0]);
                den = &den * &Polynomial::new(vec![1.0, 2.0, 1.0]);
            }
        }
    }
    if axis_poles.is_empty() {
        None
    } else {
        Some(TransferExpr::rational(num, den).expect("nonzero denominator"))
    }
}

/// `f̃ = f · h`.
pub fn regularize(f: &TransferExpr, axis_poles: &[AxisPole]) -> Result<TransferExpr> {
    match regularizer(axis_poles) {
        None => Ok(f.clone()),
        Some(h) => f.mul(&h),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    #[test]
    fn rational_value_and_slope() {
        let e = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![1.0, 1.0])).unwrap();
        assert!((e.eval_scalar(c(1.0, 0.0)).unwrap() - 0.5).norm() < 1e-15);
        assert!((e.eval_deriv(c(0.0, 0.0)).unwrap()[(0, 0)] + 1.0).norm() < 1e-15);
    }

    #[test]
    fn delay_slope_at_j() {
        let e = TransferExpr::delay(1.0).unwrap();
        let d = e.eval_deriv(c(0.0, 1.0)).unwrap()[(0, 0)];
        assert!((d + c(0.0, -1.0).exp()).norm() < 1e-15);
    }

    #[test]
    fn zero_controller_closed_loop() {
        let g = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![2.0, 1.0])).unwrap();
        let cl = closed_loop(&g, &TransferExpr::zeros(1, 1)).unwrap();
        let t = cl.t.eval(c(0.3, 0.7)).unwrap();
        assert!((t[(0, 0)] - 1.0).norm() < 1e-15);
        assert!(t[(0, 1)].norm() < 1e-15);
        assert!((t[(1, 0)] - g.eval_scalar(c(0.3, 0.7)).unwrap()).norm() < 1e-15);
    }

    #[test]
    fn unit_loop_halves() {
        let one = TransferExpr::constant(1.0);
        let cl = closed_loop(&one, &one).unwrap();
        let t = cl.t.eval(c(0.0, 3.0)).unwrap();
        assert!((t[(0, 0)] - 0.5).norm() < 1e-15);
        assert!((t[(0, 1)] + 0.5).norm() < 1e-15);
        assert!((t[(1, 0)] - 0.5).norm() < 1e-15);
    }

    #[test]
    fn regularizer_pair_at_j() {
        let h = regularizer(&[AxisPole { omega: 1.0, order: 1 }]).unwrap();
        assert!(h.eval_scalar(c(0.0, 1.0)).unwrap().norm() < 1e-15);
        let mut prev = f64::INFINITY;
        for w in [1e2, 1e3, 1e4] {
            let gap = (h.eval_scalar(c(0.0, w)).unwrap() - 1.0).norm();
            assert!(gap < prev);
            prev = gap;
        }
    }

    #[test]
    fn regularizer_origin() {
        let h = regularizer(&[AxisPole { omega: 0.0, order: 1 }]).unwrap();
        assert!(h.eval_scalar(c(0.0, 0.0)).unwrap().norm() == 0.0);
        assert!((h.eval_scalar(c(0.0, 1e8)).unwrap() - 1.0).norm() < 1e-7);
    }

    #[test]
    fn json_round_trip_validates() {
        let g = TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![1.0, 1.0]))
            .unwrap()
            .mul(&TransferExpr::delay(0.5).unwrap())
            .unwrap();
        let js = serde_json::to_string(&g).unwrap();
        let back: TransferExpr = serde_json::from_str(&js).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"kind":"sum","a":{"kind":"gain","rows":1,"cols":1,"values":[1.0]},"b":{"kind":"gain","rows":2,"cols":1,"values":[1.0,2.0]}}"#;
        assert!(serde_json::from_str::<TransferExpr>(bad).is_err());
    }

    #[test]
    fn feedback_both_orientations_agree() {
        let g = TransferExpr::vstack(vec![
            TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![1.0, 1.0])).unwrap(),
            TransferExpr::delay(0.3).unwrap(),
        ])
        .unwrap();
        let k = TransferExpr::hstack(vec![TransferExpr::constant(0.7), TransferExpr::constant(-0.2)]).unwrap();
        let s = c(0.2, 1.1);
        let a = TransferExpr::feedback(&g, &k, 1.0).unwrap().eval_with_deriv(s).unwrap();
        // push-through orientation: (I + G K)^{-1} G
        let b = TransferExpr::identity(2).add(&g.mul(&k).unwrap()).unwrap().inverse().unwrap().mul(&g).unwrap();
        let b = b.eval_with_deriv(s).unwrap();
        assert!((a.0 - b.0).norm() < 1e-14);
        assert!((a.1 - b.1).norm() < 1e-13);
        let kk = TransferExpr::feedback(&k, &g, 1.0).unwrap().eval_with_deriv(s).unwrap();
        let kb = k.mul(&TransferExpr::identity(2).add(&g.mul(&k).unwrap()).unwrap().inverse().unwrap()).unwrap();
        let kb = kb.eval_with_deriv(s).unwrap();
        assert!((kk.0 - kb.0).norm() < 1e-14);
        assert!((kk.1 - kb.1).norm() < 1e-13);
    }
}
