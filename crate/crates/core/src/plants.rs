//! The delayed reaction-diffusion and anti-damped wave plants, reduced and decomposed
//! companions, controller fixtures, weights and tunable controller structures.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::xfer::{
    Analytic, AxisPole, CMat, Polynomial, QrMatrix, QuasiPolynomial, RhpPoleInfo, StateSpace, TransferExpr, C,
};

/// Parameter id carried by the tunable leaf of every structured controller.
pub const TUNABLE_ID: usize = 0;

fn poly(c: &[f64]) -> Polynomial {
    // printed high-to-low
    Polynomial::new(c.iter().rev().copied().collect())
}

fn ratio(num: &[f64], den: &[f64]) -> TransferExpr {
    TransferExpr::rational(poly(num), poly(den)).expect("nonzero denominator")
}

// ---------------------------------------------------------------- parabolic

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParabolicPlant {
    pub length: f64,
    pub delay: f64,
    pub reaction: f64,
    pub sensors: Vec<f64>,
}

impl Default for ParabolicPlant {
    fn default() -> Self {
        let length = 2.0 * PI;
        ParabolicPlant { length, delay: 1.0, reaction: 0.5, sensors: ParabolicPlant::interior_sensors(length, 5) }
    }
}

impl ParabolicPlant {
    /// `ξᵢ = iL/(m+1)`, `i = 1..m`.
    pub fn interior_sensors(length: f64, m: usize) -> Vec<f64> {
        (1..=m).map(|i| i as f64 * length / (m + 1) as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.delay >= 0.0) {
            return Err(Error::InvalidParameter("parabolic plant needs L > 0, D ≥ 0".into()));
        }
        if self.sensors.is_empty() || self.sensors.iter().any(|&x| !(0.0..=self.length).contains(&x)) {
            return Err(Error::InvalidParameter("sensor positions must lie in [0, L]".into()));
        }
        Ok(())
    }

    /// Open-loop poles `s_k = c − k²π²/L²`, `k = 1..count`.
    pub fn poles(&self, count: usize) -> Vec<f64> {
        (1..=count).map(|k| self.reaction - (k as f64 * PI / self.length).powi(2)).collect()
    }

    pub fn pole_info(&self) -> RhpPoleInfo {
        let mut n_p = 0;
        let mut axis = vec![];
        let mut scale: f64 = 0.0;
        for s in self.poles(1000) {
            if s > 0.0 {
                n_p += 1;
                scale = scale.max(s.abs());
            } else if s == 0.0 {
                axis.push(AxisPole { omega: 0.0, order: 1 });
            } else {
                break;
            }
        }
        RhpPoleInfo { n_p, axis_poles: axis, frequency_scale: scale }
    }

    /// `m×1` column of the sensor transfer functions.
    pub fn tf(&self) -> Result<TransferExpr> {
        self.validate()?;
        TransferExpr::vstack(self.sensors.iter().map(|&xi| self.tf_at(xi)).collect::<Result<_>>()?)
    }

    pub fn tf_at(&self, xi: f64) -> Result<TransferExpr> {
        if !(0.0..=self.length).contains(&xi) {
            return Err(Error::InvalidParameter(format!("ξ = {xi} outside [0, L]")));
        }
        Ok(TransferExpr::analytic(Analytic::ParabolicSensor {
            length: self.length,
            delay: self.delay,
            reaction: self.reaction,
            xi,
        }))
    }
}

pub fn parabolic_tf(plant: &ParabolicPlant, xi: f64) -> Result<TransferExpr> {
    plant.tf_at(xi)
}

/// `[n/n]` Padé approximant of `e^{−θs}` as `(num, den)`.
pub fn pade(order: usize, theta: f64) -> (Polynomial, Polynomial) {
    let n = order;
    let fact = |k: usize| (1..=k).map(|i| i as f64).product::<f64>();
    let mut num = vec![0.0; n + 1];
    let mut den = vec![0.0; n + 1];
    for k in 0..=n {
        let c = fact(2 * n - k) * fact(n) / (fact(2 * n) * fact(k) * fact(n - k)) * theta.powi(k as i32);
        den[k] = c;
        num[k] = if k % 2 == 0 { c } else { -c };
    }
    (Polynomial::new(num), Polynomial::new(den))
}

/// Blocks of a generalized plant `[z; y] = [[P_zd, P_zu], [P_yd, P_yu]] [d; u]`.
#[derive(Clone, Debug)]
pub struct GeneralizedPlant {
    pub zd: TransferExpr,
    pub zu: TransferExpr,
    pub yd: TransferExpr,
    pub yu: TransferExpr,
}

impl GeneralizedPlant {
    /// Lower LFT under `u = −K y`: `P_zd − P_zu K (I + P_yu K)^{-1} P_yd`.
    pub fn close(&self, k: &TransferExpr) -> Result<TransferExpr> {
        let mid = TransferExpr::feedback(k, &self.yu, 1.0)?;
        self.zd.sub(&self.zu.mul(&mid)?.mul(&self.yd)?)
    }
}

#[derive(Clone, Debug)]
pub struct ReducedParabolic {
    pub n_space: usize,
    pub dxi: f64,
    /// Finite-difference part driven by the delayed boundary value; `A` is symmetric.
    pub operator: StateSpace,
    pub pade: (Polynomial, Polynomial),
    /// `operator · Padé`, `m×1`.
    pub g_red: TransferExpr,
    /// Full realization of `g_red` (difference states then Padé states).
    pub realization: StateSpace,
    /// Disturbance on every plant state, `z = (x, W_u u)` with `W_u = s/(1 + s/a)`.
    pub p_red: GeneralizedPlant,
}

pub const REDUCED_WU_POLE: f64 = 100.0;

/// Central differences on `n_space` interior nodes (`Δξ = L/(n+1)`), Dirichlet at both ends,
/// the right boundary value being the Padé-delayed control.
pub fn reduced_parabolic(plant: &ParabolicPlant, n_space: usize, pade_order: usize) -> Result<ReducedParabolic> {
    plant.validate()?;
    if n_space < 2 {
        return Err(Error::InvalidParameter("n_space must be at least 2".into()));
    }
    let n = n_space;
    let h = plant.length / (n + 1) as f64;
    let h2 = h * h;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -2.0 / h2 + plant.reaction;
        if i + 1 < n {
            a[(i, i + 1)] = 1.0 / h2;
            a[(i + 1, i)] = 1.0 / h2;
        }
    }
    let mut b = DMatrix::zeros(n, 1);
    b[(n - 1, 0)] = 1.0 / h2;
    let m = plant.sensors.len();
    let mut c = DMatrix::zeros(m, n);
    // weight on the boundary value for sensors right of the last node
    let mut e = DMatrix::zeros(m, 1);
    for (i, &xi) in plant.sensors.iter().enumerate() {
        let k = xi / h;
        let j = (k + 1e-12).floor() as usize;
        let t = (k - j as f64).max(0.0);
        let mut put = |node: usize, w: f64| {
            if w == 0.0 || node == 0 {
                return;
            }
            if node <= n {
                c[(i, node - 1)] += w;
            } else {
                e[(i, 0)] += w;
            }
        };
        put(j, 1.0 - t);
        put(j + 1, t);
    }
    let operator = StateSpace::new(a.clone(), b.clone(), c.clone(), e.clone())?;
    let (pn, pd) = pade(pade_order, plant.delay);
    let g_red =
        TransferExpr::state_space(operator.clone()).mul(&TransferExpr::rational(pn.clone(), pd.clone())?)?;

    let ps = StateSpace::from_tf(&pn, &pd)?;
    let np = ps.order();
    let nr = n + np;
    // plant states [x; x_p], W_u state appended for the generalized plant
    let mut ar = DMatrix::zeros(nr, nr);
    ar.view_mut((0, 0), (n, n)).copy_from(&a);
    ar.view_mut((0, n), (n, np)).copy_from(&(&b * &ps.c));
    ar.view_mut((n, n), (np, np)).copy_from(&ps.a);
    let mut br = DMatrix::zeros(nr, 1);
    br.view_mut((0, 0), (n, 1)).copy_from(&(&b * ps.d[(0, 0)]));
    br.view_mut((n, 0), (np, 1)).copy_from(&ps.b);
    let mut cr = DMatrix::zeros(m, nr);
    cr.view_mut((0, 0), (m, n)).copy_from(&c);
    cr.view_mut((0, n), (m, np)).copy_from(&(&e * &ps.c));
    let dr = &e * ps.d[(0, 0)];
    let realization = StateSpace::new(ar.clone(), br.clone(), cr.clone(), dr.clone())?;

    let wa = REDUCED_WU_POLE;
    let nt = nr + 1;
    let mut at = DMatrix::zeros(nt, nt);
    at.view_mut((0, 0), (nr, nr)).copy_from(&ar);
    at[(nr, nr)] = -wa;
    let mut bu = DMatrix::zeros(nt, 1);
    bu.view_mut((0, 0), (nr, 1)).copy_from(&br);
    bu[(nr, 0)] = 1.0;
    let mut bd = DMatrix::zeros(nt, nr);
    bd.view_mut((0, 0), (nr, nr)).fill_with_identity();
    let mut cz = DMatrix::zeros(nr + 1, nt);
    cz.view_mut((0, 0), (nr, nr)).fill_with_identity();
    cz[(nr, nr)] = -wa * wa;
    let mut dzu = DMatrix::zeros(nr + 1, 1);
    dzu[(nr, 0)] = wa;
    let mut cy = DMatrix::zeros(m, nt);
    cy.view_mut((0, 0), (m, nr)).copy_from(&cr);
    let ss = |b: &DMatrix<f64>, c: &DMatrix<f64>, d: DMatrix<f64>| -> Result<TransferExpr> {
        Ok(TransferExpr::state_space(StateSpace::new(at.clone(), b.clone(), c.clone(), d)?))
    };
    let p_red = GeneralizedPlant {
        zd: ss(&bd, &cz, DMatrix::zeros(nr + 1, nr))?,
        zu: ss(&bu, &cz, dzu)?,
        yd: ss(&bd, &cy, DMatrix::zeros(m, nr))?,
        yu: ss(&bu, &cy, dr)?,
    };
    Ok(ReducedParabolic { n_space, dxi: h, operator, pade: (pn, pd), g_red, realization, p_red })
}

// ---------------------------------------------------------------- wave

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePlant {
    pub q: f64,
}

impl WavePlant {
    pub fn new(q: f64) -> Result<Self> {
        if !(q > 0.0) || q == 1.0 {
            return Err(Error::InvalidParameter(format!("anti-damping q = {q} must be > 0 and ≠ 1")));
        }
        Ok(WavePlant { q })
    }

    /// `Q = (1 + q)/(1 − q)`.
    pub fn big_q(&self) -> f64 {
        (1.0 + self.q) / (1.0 - self.q)
    }

    /// Real part `ln|Q|/2` of the open-loop pole chain.
    pub fn chain_real_part(&self) -> f64 {
        0.5 * self.big_q().abs().ln()
    }

    /// `1 − Qe^{−2s}`, whose zeros form the pole chain.
    pub fn chain_quasi(&self) -> QuasiPolynomial {
        QuasiPolynomial::new(vec![(Polynomial::one(), 0.0), (Polynomial::constant(-self.big_q()), 2.0)])
    }

    /// `1 + Qe^{−2s}`, numerator of `G₂` and `G₃`.
    pub fn zero_quasi(&self) -> QuasiPolynomial {
        QuasiPolynomial::new(vec![(Polynomial::one(), 0.0), (Polynomial::constant(self.big_q()), 2.0)])
    }

    /// `[G₁; G₂; G₃]` for the outputs `x(0,t)`, `x(1,t)`, `x_t(1,t)`.
    pub fn tf(&self) -> TransferExpr {
        let q = self.q;
        let n1 = QuasiPolynomial::term(Polynomial::constant(2.0 / (1.0 - q)), 1.0);
        let n2 = self.zero_quasi();
        let n3 = n2.mul_poly(&Polynomial::s());
        let den = self.chain_quasi().mul_poly(&Polynomial::s());
        TransferExpr::quasi_rational(3, 1, vec![n1, n2, n3], den).expect("3x1 quasi-rational")
    }
}

pub fn wave_tf(q: f64) -> Result<WavePlant> {
    WavePlant::new(q)
}

#[derive(Clone, Debug)]
pub struct WaveDecomposition {
    /// `[1/(s(1−q)); (1+Q)/(2s); ½]`.
    pub g_tilde: TransferExpr,
    /// `[−(1−e^{−s})/(s(1−q)); −Q(1−e^{−2s})/(2s); (Q/2)e^{−2s}]`, entire and bounded on the RHP.
    pub phi: TransferExpr,
    /// `G/(1 + G₃)`.
    pub g_hat: TransferExpr,
}

impl WaveDecomposition {
    pub fn g_tilde_pole_info(&self) -> RhpPoleInfo {
        RhpPoleInfo { n_p: 0, axis_poles: vec![AxisPole { omega: 0.0, order: 1 }], frequency_scale: 1.0 }
    }
}

pub fn wave_decompose(q: f64) -> Result<WaveDecomposition> {
    let w = WavePlant::new(q)?;
    let big_q = w.big_q();
    let g_tilde = TransferExpr::vstack(vec![
        TransferExpr::rational(Polynomial::one(), Polynomial::new(vec![0.0, 1.0 - q]))?,
        TransferExpr::rational(Polynomial::constant(1.0 + big_q), Polynomial::new(vec![0.0, 2.0]))?,
        TransferExpr::constant(0.5),
    ])?;
    let phi = TransferExpr::vstack(vec![
        TransferExpr::analytic(Analytic::DelayDifference { theta: 1.0 }).scale(-1.0 / (1.0 - q)),
        TransferExpr::analytic(Analytic::DelayDifference { theta: 2.0 }).scale(-0.5 * big_q),
        TransferExpr::delay(2.0)?.scale(0.5 * big_q),
    ])?;
    let g_hat = TransferExpr::feedback(&w.tf(), &base_controller(), 1.0)?;
    Ok(WaveDecomposition { g_tilde, phi, g_hat })
}

/// `K₀ = [0 0 1]`, velocity feedback at the actuated end.
pub fn base_controller() -> TransferExpr {
    TransferExpr::gain(1, 3, vec![0.0, 0.0, 1.0]).expect("1x3")
}

/// `K = feedback(K̃, −Φ) = K̃ (I − Φ K̃)^{-1}`.
pub fn recover_controller(k_tilde: &TransferExpr, phi: &TransferExpr) -> Result<TransferExpr> {
    TransferExpr::feedback(k_tilde, &phi.scale(-1.0), 1.0)
}

/// Nominal surrogate gain at `q₀ = 3`.
pub const K_TILDE_NOMINAL: [f64; 3] = [-1.049, -1.049, -0.05402];
pub const K_TILDE_SCHED_1: [f64; 3] = [-0.1102, -0.1102, -0.1053];
pub const K_TILDE_SCHED_2: [f64; 3] = [0.03901, 0.03901, 0.02855];
pub const SCHED_Q0: f64 = 3.0;

/// `K̃(q, x) = K̃(q₀) + (q − q₀)[x₁ x₂ x₃] + (q − q₀)²[x₄ x₅ x₆]`.
pub fn scheduled_k_tilde(q: f64, x: &[f64]) -> Result<TransferExpr> {
    if x.len() != 6 {
        return Err(Error::InvalidParameter("scheduled gain needs 6 parameters".into()));
    }
    let d = q - SCHED_Q0;
    let v = (0..3).map(|i| K_TILDE_NOMINAL[i] + d * x[i] + d * d * x[3 + i]).collect();
    TransferExpr::gain(1, 3, v)
}

/// `K₀ + feedback(K̃(q, x), −Φ(q))`.
pub fn scheduled_controller(q: f64, x: &[f64]) -> Result<TransferExpr> {
    let dec = wave_decompose(q)?;
    base_controller().add(&recover_controller(&scheduled_k_tilde(q, x)?, &dec.phi)?)
}

/// The printed scheduling coefficients.
pub fn scheduled_parameters() -> Vec<f64> {
    K_TILDE_SCHED_1.iter().chain(&K_TILDE_SCHED_2).copied().collect()
}

/// `feedback(G, K₀)` in quasi-rational normal form, so common factors cancel symbolically.
pub fn wave_prestabilized(q: f64, k0: &TransferExpr) -> Result<TransferExpr> {
    let g = WavePlant::new(q)?.tf();
    let fb = TransferExpr::feedback(&g, k0, 1.0)?;
    Ok(QrMatrix::from_expr(&fb)?.to_expr())
}

/// `[(1−q)(s + 4^{−3})/(s + 1), 0, 1]`.
pub fn wave_adhoc_controller(q: f64) -> TransferExpr {
    TransferExpr::hstack(vec![
        TransferExpr::rational(Polynomial::new(vec![1.0 / 64.0, 1.0]).scale(1.0 - q), Polynomial::new(vec![1.0, 1.0]))
            .expect("rational"),
        TransferExpr::constant(0.0),
        TransferExpr::constant(1.0),
    ])
    .expect("1x3")
}

/// `[c₀(1−q)s/(s + c₀(1 − e^{−s})), 0, 1]`.
pub fn wave_backstepping_controller(q: f64, c0: f64) -> TransferExpr {
    TransferExpr::hstack(vec![backstepping_entry(q, c0), TransferExpr::constant(0.0), TransferExpr::constant(1.0)])
        .expect("1x3")
}

fn backstepping_den(c0: f64) -> QuasiPolynomial {
    QuasiPolynomial::new(vec![(Polynomial::new(vec![c0, 1.0]), 0.0), (Polynomial::constant(-c0), 1.0)])
}

fn backstepping_entry(q: f64, c0: f64) -> TransferExpr {
    let num = QuasiPolynomial::from(Polynomial::new(vec![0.0, c0 * (1.0 - q)]));
    TransferExpr::quasi_rational(1, 1, vec![num], backstepping_den(c0)).expect("scalar")
}

/// Printed finite-dimensional controller of the wave study (`K₀ + K₁(x)` overall).
pub fn wave_fd_controller() -> TransferExpr {
    TransferExpr::hstack(vec![
        ratio(&[-2.992, -303.5, -104.7, -0.488], &[1.0, 102.2, 101.7, 0.522]),
        ratio(&[-0.04494, -4.047, 0.001097], &[1.0, 101.2, 0.522]),
        ratio(&[1.207, 122.7, 0.5271], &[1.0, 101.2, 0.522]),
    ])
    .expect("1x3")
}

/// Small-gain initializer `n₀/d₀ [1 1 1]`.
pub fn wave_small_gain_increment() -> TransferExpr {
    let e = ratio(&[0.3218, 0.0643], &[1.0, 100.1, 10.0]);
    TransferExpr::hstack(vec![e.clone(), e.clone(), e]).expect("1x3")
}

pub fn wave_small_gain_parameters() -> Vec<f64> {
    let mut x = vec![10.0, 100.1];
    for _ in 0..3 {
        x.extend([0.0643, 0.3218, 0.0]);
    }
    x
}

// ---------------------------------------------------------------- fixtures

struct RowData {
    nums: [[f64; 3]; 5],
    den: [f64; 3],
}

const PARABOLIC_ROWS: [(&str, RowData); 4] = [
    (
        "parabolic_initial",
        RowData {
            nums: [
                [0.001653, 0.822, 5.557],
                [0.01467, 3.125, 20.69],
                [0.0221, 4.784, 31.2],
                [0.01733, 3.715, 24.34],
                [0.00231, 0.9017, 6.596],
            ],
            den: [1.0, 4.315, 18.3],
        },
    ),
    (
        "parabolic_matched",
        RowData {
            nums: [
                [0.1343, 0.4535, 11.34],
                [0.52, 1.755, 45.23],
                [0.7443, 2.621, 65.23],
                [0.5976, 2.036, 52.82],
                [0.3446, 2.621, 20.47],
            ],
            den: [1.0, 10.66, 38.39],
        },
    ),
    (
        "parabolic_mixed_first",
        RowData {
            nums: [
                [0.0002403, 0.3159, 2.629],
                [0.0125, 7.134, 37.54],
                [-0.02098, 6.46, 73.02],
                [-0.01589, 6.447, 49.82],
                [0.007613, 1.283, 11.02],
            ],
            den: [1.0, 2.291, 19.85],
        },
    ),
    (
        "parabolic_mixed_final",
        RowData {
            nums: [
                [0.00336, 0.4678, 2.196],
                [-0.002542, 6.097, 21.47],
                [0.08966, 3.947, 33.65],
                [-0.01911, 5.889, 27.07],
                [-0.006395, 0.7398, 5.143],
            ],
            den: [1.0, 3.731, 21.2],
        },
    ),
];

/// Parameters of a printed parabolic controller in the `RationalRow{5, 2, 2}` layout.
pub fn parabolic_fixture_parameters(name: &str) -> Option<Vec<f64>> {
    let (_, r) = PARABOLIC_ROWS.iter().find(|(n, _)| *n == name)?;
    let mut x = vec![r.den[2], r.den[1]];
    for n in &r.nums {
        x.extend([n[2], n[1], n[0]]);
    }
    Some(x)
}

pub fn parabolic_fixture(name: &str) -> Option<TransferExpr> {
    let x = parabolic_fixture_parameters(name)?;
    ControllerStructure::k2().value(&x).ok()
}

/// All printed controllers; wave entries at `q`.
pub fn fixture_controllers(q: f64) -> BTreeMap<&'static str, TransferExpr> {
    let mut m = BTreeMap::new();
    for (name, _) in &PARABOLIC_ROWS {
        m.insert(*name, parabolic_fixture(name).expect("fixture"));
    }
    m.insert("wave_adhoc", wave_adhoc_controller(q));
    m.insert("wave_backstepping", wave_backstepping_controller(q, 1.0));
    m.insert("wave_fd", wave_fd_controller());
    m.insert("wave_small_gain", wave_adhoc_controller(q).add(&wave_small_gain_increment()).expect("1x3"));
    if let Ok(k) = scheduled_controller(q, &[0.0; 6]) {
        m.insert("wave_surrogate_nominal", k);
    }
    if let Ok(k) = scheduled_controller(q, &scheduled_parameters()) {
        m.insert("wave_scheduled", k);
    }
    m
}

/// Declared unstable-pole data of a fixture controller.
pub fn fixture_pole_info(name: &str) -> Option<RhpPoleInfo> {
    if let Some(x) = parabolic_fixture_parameters(name) {
        return ControllerStructure::k2().pole_info(&x).ok();
    }
    match name {
        "wave_adhoc" | "wave_backstepping" | "wave_fd" | "wave_small_gain" | "wave_surrogate_nominal"
        | "wave_scheduled" => Some(RhpPoleInfo::stable()),
        _ => None,
    }
}

/// Denominator whose zeros are the fixture's poles (rational and quasi-rational fixtures).
pub fn fixture_denominators(name: &str) -> Vec<QuasiPolynomial> {
    if let Some((_, r)) = PARABOLIC_ROWS.iter().find(|(n, _)| *n == name) {
        return vec![poly(&r.den).into()];
    }
    match name {
        "wave_adhoc" => vec![Polynomial::new(vec![1.0, 1.0]).into()],
        // the zero at s = 0 cancels against the numerator
        "wave_backstepping" => vec![backstepping_den(1.0)],
        "wave_fd" => vec![poly(&[1.0, 102.2, 101.7, 0.522]).into(), poly(&[1.0, 101.2, 0.522]).into()],
        "wave_small_gain" => vec![Polynomial::new(vec![1.0, 1.0]).into(), poly(&[1.0, 100.1, 10.0]).into()],
        _ => vec![],
    }
}

// ---------------------------------------------------------------- weights

/// `(s/10)/(1 + s/10³)`.
pub fn mixed_wu() -> TransferExpr {
    TransferExpr::rational(Polynomial::new(vec![0.0, 0.1]), Polynomial::new(vec![1.0, 1e-3])).expect("rational")
}

fn diag5(d: [f64; 5]) -> TransferExpr {
    let mut v = vec![0.0; 25];
    for i in 0..5 {
        v[i * 5 + i] = d[i];
    }
    TransferExpr::gain(5, 5, v).expect("5x5")
}

pub fn mixed_we_first() -> TransferExpr {
    diag5([3.0, 0.0, 0.0, 0.0, 0.0])
}

pub fn mixed_we_final() -> TransferExpr {
    diag5([1.0, 0.0, 0.0, 0.0, 0.2])
}

pub fn wave_we() -> TransferExpr {
    let z = TransferExpr::constant(0.0);
    TransferExpr::block(vec![
        vec![ratio(&[0.01, 0.5002], &[1.0, 0.01429]), z.clone(), z.clone()],
        vec![z.clone(), ratio(&[0.99, 0.0007147], &[1.0, 0.07941]), z.clone()],
        vec![z.clone(), z, TransferExpr::constant(0.01)],
    ])
    .expect("3x3")
}

pub fn wave_wu() -> TransferExpr {
    TransferExpr::constant(0.01)
}

/// `s/(1 + s/100)`.
pub fn reduced_wu() -> TransferExpr {
    TransferExpr::rational(Polynomial::new(vec![0.0, 1.0]), Polynomial::new(vec![1.0, 1.0 / REDUCED_WU_POLE]))
        .expect("rational")
}

pub fn weight_filters() -> BTreeMap<&'static str, TransferExpr> {
    let mut m = BTreeMap::new();
    m.insert("mixed_wu", mixed_wu());
    m.insert("mixed_we_first", mixed_we_first());
    m.insert("mixed_we_final", mixed_we_final());
    m.insert("wave_we", wave_we());
    m.insert("wave_wu", wave_wu());
    m.insert("reduced_wu", reduced_wu());
    m
}

// ---------------------------------------------------------------- structures

/// Parameterized controller families `x ↦ K(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "structure", rename_all = "snake_case")]
pub enum ControllerStructure {
    /// `[n₁/d … n_m/d]` with monic `d`; `x = [d₀ … d_{k−1}, n₁₀ … n₁ⱼ, …]` (low to high).
    RationalRow { outputs: usize, num_degree: usize, den_degree: usize },
    /// Constant `rows×cols` gain, row-major.
    Static { rows: usize, cols: usize },
    /// Surrogate gain `K̃(q, x)` around the nominal design at `q₀ = 3`.
    ScheduledQuadratic { q: f64 },
    /// `[(1−q)(x₂s + x₃)/(s + x₁), 0, 1]`.
    AdHoc { q: f64 },
    /// `[c₀(1−q)s/(s + c₀(1 − e^{−s})), 0, 1]`, `x = [c₀]`.
    Backstepping { q: f64 },
}

impl ControllerStructure {
    /// Second-order shared-denominator row for five sensors.
    pub fn k2() -> Self {
        ControllerStructure::RationalRow { outputs: 5, num_degree: 2, den_degree: 2 }
    }

    /// Second-order shared-denominator row for the three wave outputs.
    pub fn wave_increment() -> Self {
        ControllerStructure::RationalRow { outputs: 3, num_degree: 2, den_degree: 2 }
    }

    pub fn dim(&self) -> usize {
        match *self {
            ControllerStructure::RationalRow { outputs, num_degree, den_degree } => {
                den_degree + outputs * (num_degree + 1)
            }
            ControllerStructure::Static { rows, cols } => rows * cols,
            ControllerStructure::ScheduledQuadratic { .. } => 6,
            ControllerStructure::AdHoc { .. } => 3,
            ControllerStructure::Backstepping { .. } => 1,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match *self {
            ControllerStructure::RationalRow { outputs, .. } => (1, outputs),
            ControllerStructure::Static { rows, cols } => (rows, cols),
            _ => (1, 3),
        }
    }

    pub fn is_finite_dimensional(&self) -> bool {
        !matches!(self, ControllerStructure::Backstepping { .. })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("structure needs {} parameters, got {}", self.dim(), x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite controller parameter".into()));
        }
        Ok(())
    }

    fn row_parts(&self, x: &[f64]) -> (Vec<Polynomial>, Polynomial) {
        let ControllerStructure::RationalRow { outputs, num_degree, den_degree } = *self else {
            unreachable!("rational row only")
        };
        let mut d = x[..den_degree].to_vec();
        d.push(1.0);
        let nums = (0..outputs)
            .map(|j| {
                let o = den_degree + j * (num_degree + 1);
                Polynomial::new(x[o..o + num_degree + 1].to_vec())
            })
            .collect();
        (nums, Polynomial::new(d))
    }

    /// Numerators and shared denominator of a `RationalRow` point.
    pub fn rational_parts(&self, x: &[f64]) -> Result<(Vec<Polynomial>, Polynomial)> {
        self.check(x)?;
        match self {
            ControllerStructure::RationalRow { .. } => Ok(self.row_parts(x)),
            _ => Err(Error::InvalidParameter("not a rational row structure".into())),
        }
    }

    /// `K(x)` without the tunable marker.
    pub fn value(&self, x: &[f64]) -> Result<TransferExpr> {
        self.check(x)?;
        match *self {
            ControllerStructure::RationalRow { .. } => {
                let (nums, den) = self.row_parts(x);
                TransferExpr::hstack(
                    nums.into_iter().map(|n| TransferExpr::rational(n, den.clone())).collect::<Result<_>>()?,
                )
            }
            ControllerStructure::Static { rows, cols } => TransferExpr::gain(rows, cols, x.to_vec()),
            ControllerStructure::ScheduledQuadratic { q } => scheduled_k_tilde(q, x),
            ControllerStructure::AdHoc { q } => TransferExpr::hstack(vec![
                TransferExpr::rational(Polynomial::new(vec![x[2], x[1]]).scale(1.0 - q), Polynomial::new(vec![x[0], 1.0]))?,
                TransferExpr::constant(0.0),
                TransferExpr::constant(1.0),
            ]),
            ControllerStructure::Backstepping { q } => Ok(wave_backstepping_controller(q, x[0])),
        }
    }

    /// `K(x)` wrapped as the tunable leaf `TUNABLE_ID`.
    pub fn build(&self, x: &[f64]) -> Result<TransferExpr> {
        Ok(TransferExpr::tunable(TUNABLE_ID, &self.value(x)?))
    }

    /// `∂K/∂x_k` at `s`.
    pub fn partial(&self, x: &[f64], k: usize, s: C) -> Result<CMat> {
        self.check(x)?;
        let (r, c) = self.dims();
        let mut out = CMat::zeros(r, c);
        let one = C::new(1.0, 0.0);
        match *self {
            ControllerStructure::RationalRow { outputs, num_degree, den_degree } => {
                let (nums, den) = self.row_parts(x);
                let dv = den.eval(s);
                if dv.norm() == 0.0 {
                    return Err(Error::singular(s));
                }
                if k < den_degree {
                    let sk = s.powu(k as u32);
                    for j in 0..outputs {
                        out[(0, j)] = -nums[j].eval(s) * sk / (dv * dv);
                    }
                } else {
                    let j = (k - den_degree) / (num_degree + 1);
                    let i = (k - den_degree) % (num_degree + 1);
                    out[(0, j)] = s.powu(i as u32) / dv;
                }
            }
            ControllerStructure::Static { .. } => {
                out[(k / c, k % c)] = one;
            }
            ControllerStructure::ScheduledQuadratic { q } => {
                let dq = q - SCHED_Q0;
                out[(0, k % 3)] = one * if k < 3 { dq } else { dq * dq };
            }
            ControllerStructure::AdHoc { q } => {
                let d = s + x[0];
                if d.norm() == 0.0 {
                    return Err(Error::singular(s));
                }
                out[(0, 0)] = (1.0 - q)
                    * match k {
                        0 => -(s * x[1] + x[2]) / (d * d),
                        1 => s / d,
                        _ => one / d,
                    };
            }
            ControllerStructure::Backstepping { q } => {
                let den = backstepping_den(x[0]).eval(s);
                if den.norm() == 0.0 {
                    return Err(Error::singular(s));
                }
                out[(0, 0)] = (1.0 - q) * s * s / (den * den);
            }
        }
        Ok(out)
    }

    /// Unstable and axis poles of `K(x)`.
    pub fn pole_info(&self, x: &[f64]) -> Result<RhpPoleInfo> {
        self.check(x)?;
        let from_roots = |roots: Vec<C>| {
            let mut info = RhpPoleInfo::stable();
            for z in roots {
                info.frequency_scale = info.frequency_scale.max(z.norm());
                if z.re.abs() <= 1e-10 * (1.0 + z.norm()) {
                    if z.im >= 0.0 {
                        let om = z.im.abs();
                        match info.axis_poles.iter_mut().find(|p| (p.omega - om).abs() < 1e-9) {
                            Some(p) => p.order += 1,
                            None => info.axis_poles.push(AxisPole { omega: om, order: 1 }),
                        }
                    }
                } else if z.re > 0.0 {
                    info.n_p += 1;
                }
            }
            info
        };
        match *self {
            ControllerStructure::RationalRow { .. } => Ok(from_roots(self.row_parts(x).1.roots())),
            ControllerStructure::Static { .. } | ControllerStructure::ScheduledQuadratic { .. } => {
                Ok(RhpPoleInfo::stable())
            }
            ControllerStructure::AdHoc { .. } => Ok(from_roots(vec![C::new(-x[0], 0.0)])),
            ControllerStructure::Backstepping { .. } => {
                // s + c₀(1 − e^{−s}) has only the cancelled root s = 0 in Re s ≥ 0 when c₀ > 0
                Ok(if x[0] > 0.0 { RhpPoleInfo::stable() } else { RhpPoleInfo::with_unstable(1, x[0].abs()) })
            }
        }
    }

    pub fn rhp_poles(&self, x: &[f64]) -> Result<usize> {
        Ok(self.pole_info(x)?.n_p)
    }
}
