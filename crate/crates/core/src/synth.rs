//! Structured controller synthesis by a proximal bundle method with certified function values
//! and a Nyquist stability gate at every trial point.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normest::{self, H2Estimate, HinfOptions, NormEstimate};
use crate::nyquist::{self, NyquistCertificate, NyquistOptions, Verdict3};
use crate::plants::{ControllerStructure, GeneralizedPlant, TUNABLE_ID};
use crate::sampling;
use crate::xfer::{CMat, QrMatrix, RhpPoleInfo, StateSpace, TransferExpr, C};

/// Maps the tunable controller `K(x)` to a closed-loop channel.
pub type ChannelFn = Arc<dyn Fn(&TransferExpr) -> Result<TransferExpr> + Send + Sync>;

#[derive(Clone)]
pub enum Gate {
    /// Nyquist test of `(G, K(x))` with the declared poles of `G`.
    Direct { g: TransferExpr, info: RhpPoleInfo },
    /// Nyquist test of `(G₀, K(x))` for a stable pre-stabilized `G₀`; `K(x)` is the increment.
    Prestabilized { g0: TransferExpr },
}

impl Gate {
    pub fn plant(&self) -> &TransferExpr {
        match self {
            Gate::Direct { g, .. } => g,
            Gate::Prestabilized { g0 } => g0,
        }
    }

    fn info(&self, structure: &ControllerStructure, x: &[f64]) -> Result<RhpPoleInfo> {
        let kinfo = structure.pole_info(x)?;
        Ok(match self {
            Gate::Direct { info, .. } => info.merge(&kinfo),
            Gate::Prestabilized { .. } => kinfo,
        })
    }
}

#[derive(Clone)]
pub enum Objective {
    Hinf(ChannelFn),
    H2(ChannelFn),
}

#[derive(Clone)]
pub enum Constraint {
    /// `‖(I + K G)^{-1}‖∞ ≤ 1/α` on the gate loop.
    DiskMargin { alpha: f64 },
    /// Nyquist curve `f(jω)` kept outside `{Im² < α(r − Re)}`.
    ConeRegion { alpha: f64, r: f64 },
    /// Closed-loop eigenvalues of a finite-dimensional loop with `plant`.
    SoftPoleRegion { plant: StateSpace, decay: f64, damping: f64, maxfreq: f64 },
    MaxNorm { name: String, channel: ChannelFn, bound: f64 },
}

impl Constraint {
    fn name(&self) -> String {
        match self {
            Constraint::DiskMargin { .. } => "disk_margin".into(),
            Constraint::ConeRegion { .. } => "cone_region".into(),
            Constraint::SoftPoleRegion { .. } => "pole_region".into(),
            Constraint::MaxNorm { name, .. } => name.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthOptions {
    pub theta: f64,
    pub max_iter: usize,
    pub bundle_capacity: usize,
    pub ratio_low: f64,
    pub ratio_high: f64,
    pub backtrack_max: usize,
    pub penalty: f64,
    pub step_tol: f64,
    /// Initial proximal step length in scaled coordinates.
    pub initial_radius: f64,
    pub hinf: HinfOptions,
    pub nyquist: NyquistOptions,
    /// Fixed H2 cutoff used for both value and gradient quadrature.
    pub h2_cutoff: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            theta: 1e-2,
            max_iter: 60,
            bundle_capacity: 50,
            ratio_low: 0.1,
            ratio_high: 0.7,
            backtrack_max: 30,
            penalty: 1e3,
            step_tol: 1e-6,
            initial_radius: 0.05,
            hinf: HinfOptions::default(),
            nyquist: NyquistOptions::default(),
            h2_cutoff: 100.0,
        }
    }
}

#[derive(Clone)]
pub struct SynthesisProblem {
    pub objective: Objective,
    pub structure: ControllerStructure,
    pub gate: Gate,
    pub constraints: Vec<Constraint>,
    pub options: SynthOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterateRecord {
    pub iter: usize,
    pub x: Vec<f64>,
    /// Certified objective norm.
    pub gamma: f64,
    /// Objective plus constraint penalty.
    pub merit: f64,
    pub step_norm: f64,
    pub verdict: Verdict3,
    pub winding: i64,
    pub accepted: bool,
    pub backtracks: usize,
    pub barrier_planes: usize,
    pub residuals: Vec<(String, f64)>,
    pub radius: f64,
    pub nodes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepTolerance,
    ModelDecrease,
    IterationCap,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub x: Vec<f64>,
    pub gamma: f64,
    pub merit: f64,
    pub initial_gamma: f64,
    pub winding: i64,
    pub stop: StopReason,
    pub history: Vec<IterateRecord>,
}

impl SynthesisResult {
    /// One JSON object per line.
    pub fn history_jsonl(&self) -> String {
        self.history.iter().map(|r| serde_json::to_string(r).expect("serializable record") + "\n").collect()
    }
}

// ---------------------------------------------------------------- channel builders

fn closed_pieces(g: &TransferExpr, k: &TransferExpr) -> Result<(TransferExpr, TransferExpr)> {
    // K S = K (I + G K)^{-1} and S = I − G K S
    let ks = TransferExpr::feedback(k, g, 1.0)?;
    let s = TransferExpr::identity(g.rows()).sub(&g.mul(&ks)?)?;
    Ok((s, ks))
}

/// `(I + G_r K₀)^{-1} G_r K₀ − (I + G K)^{-1} G K`.
pub fn model_matching_channel(g: &TransferExpr, g_red: &TransferExpr, k0: &TransferExpr) -> Result<ChannelFn> {
    let reference = g_red.mul(&TransferExpr::feedback(k0, g_red, 1.0)?)?;
    let g = g.clone();
    Ok(Arc::new(move |k: &TransferExpr| reference.sub(&g.mul(&TransferExpr::feedback(k, &g, 1.0)?)?)))
}

/// `[W_e (I + G K)^{-1}; W_u K (I + G K)^{-1}]`.
pub fn mixed_sensitivity_channel(g: &TransferExpr, we: &TransferExpr, wu: &TransferExpr) -> ChannelFn {
    let (g, we, wu) = (g.clone(), we.clone(), wu.clone());
    Arc::new(move |k: &TransferExpr| {
        let (s, ks) = closed_pieces(&g, k)?;
        TransferExpr::vstack(vec![we.mul(&s)?, wu.mul(&ks)?])
    })
}

/// Lower LFT of a generalized plant.
pub fn lft_channel(p: &GeneralizedPlant) -> ChannelFn {
    let p = p.clone();
    Arc::new(move |k: &TransferExpr| p.close(k))
}

/// `(I + K G)^{-1} = I − K G (I + K G)^{-1}`.
pub fn input_sensitivity(g: &TransferExpr, k: &TransferExpr) -> Result<TransferExpr> {
    TransferExpr::identity(k.rows()).sub(&k.mul(&TransferExpr::feedback(g, k, 1.0)?)?)
}

// ---------------------------------------------------------------- evaluations

fn tangent_jac<'a>(
    t: &'a TransferExpr,
    structure: &'a ControllerStructure,
    x: &'a [f64],
) -> impl Fn(usize, C) -> Result<CMat> + 'a {
    move |k, s| {
        let seed = |id: usize, s: C| -> Result<Option<CMat>> {
            if id == TUNABLE_ID {
                Ok(Some(structure.partial(x, k, s)?))
            } else {
                Ok(None)
            }
        };
        Ok(t.eval_tangent(s, &seed)?.1)
    }
}

/// Certified `‖T‖∞` and its averaged peak subgradient.
pub fn hinf_with_gradient(
    t: &TransferExpr,
    structure: &ControllerStructure,
    x: &[f64],
    theta: f64,
    opts: &HinfOptions,
) -> Result<(NormEstimate, Vec<f64>)> {
    let est = normest::hinf_norm(t, theta, opts)?;
    let jac = tangent_jac(t, structure, x);
    let (g, _) = normest::hinf_subgradient(&est, structure.dim(), &jac)?;
    Ok((est, g))
}

/// Certified `‖T‖₂` with a gradient from trapezoidal quadrature on a log grid.
pub fn h2_with_gradient(
    t: &TransferExpr,
    structure: &ControllerStructure,
    x: &[f64],
    theta: f64,
    cutoff: f64,
) -> Result<(H2Estimate, Vec<f64>)> {
    let est = normest::h2_integral(t, theta, cutoff, None)?;
    let n = structure.dim();
    let grid = sampling::log_seed(est.cutoff * 1e-5, est.cutoff, 1200, true);
    let mut acc = vec![0.0; n];
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for &w in &grid {
        let s = C::new(0.0, w);
        let tv = t.eval(s)?;
        let mut row = vec![0.0; n];
        for (k, r) in row.iter_mut().enumerate() {
            let jac = tangent_jac(t, structure, x);
            let d = jac(k, s)?;
            *r = 2.0 * tv.iter().zip(d.iter()).map(|(a, b)| (a.conj() * b).re).sum::<f64>();
        }
        if let Some((w0, r0)) = &prev {
            for k in 0..n {
                acc[k] += 0.5 * (w - w0) * (r0[k] + row[k]);
            }
        }
        prev = Some((w, row));
    }
    let scale = if est.norm > 0.0 { 1.0 / (2.0 * std::f64::consts::PI * est.norm) } else { 0.0 };
    Ok((est, acc.into_iter().map(|v| v * scale).collect()))
}

/// `h2_objective` for a generalized plant and controller.
pub fn h2_objective(p: &GeneralizedPlant, k: &TransferExpr, theta: f64, cutoff: f64) -> Result<H2Estimate> {
    normest::h2_integral(&p.close(k)?, theta, cutoff, None)
}

/// Stability barrier `S = ‖(I + K G)^{-1}‖∞` (the input-side sensitivity).
pub fn barrier_value(g: &TransferExpr, k: &TransferExpr, theta: f64) -> Result<f64> {
    Ok(normest::hinf_norm(&input_sensitivity(g, k)?, theta, &HinfOptions::default())?.gamma)
}

/// Hinge residuals `max(0, α(r − Re f) − (Im f)²)` per node and their maximum.
pub fn cone_constraint(values: &[C], alpha: f64, r: f64) -> (Vec<f64>, f64) {
    let res: Vec<f64> = values.iter().map(|f| (alpha * (r - f.re) - f.im * f.im).max(0.0)).collect();
    let worst = res.iter().copied().fold(0.0, f64::max);
    (res, worst)
}

/// Largest hinge distance of `eigs` to `{Re λ ≤ −decay, ζ ≥ damping, |λ| ≤ maxfreq}`.
pub fn pole_region_penalty(eigs: &[C], decay: f64, damping: f64, maxfreq: f64) -> f64 {
    eigs.iter()
        .map(|l| {
            let r = l.norm();
            let zeta = if r > 0.0 { -l.re / r } else { 1.0 };
            (l.re + decay).max(damping - zeta).max(r - maxfreq).max(0.0)
        })
        .fold(0.0, f64::max)
}

/// State-space form of a rational row `1×m` or column `m×1`.
pub fn realize_rational(e: &TransferExpr) -> Result<StateSpace> {
    let q = QrMatrix::from_expr(e).map_err(|_| Error::NotFiniteDimensional)?;
    let poly_of = |qp: &crate::xfer::QuasiPolynomial| -> Result<crate::xfer::Polynomial> {
        if qp.is_polynomial() {
            Ok(qp.principal())
        } else {
            Err(Error::NotFiniteDimensional)
        }
    };
    let den = poly_of(&q.den)?;
    let lead = den.leading();
    let den = den.scale(1.0 / lead);
    let nums: Vec<_> = q.num.iter().map(|n| poly_of(n).map(|p| p.scale(1.0 / lead))).collect::<Result<_>>()?;
    let nd = den.degree();
    let comp = StateSpace::from_tf(&crate::xfer::Polynomial::one(), &den)?;
    let resid = |p: &crate::xfer::Polynomial| -> (Vec<f64>, f64) {
        let d = p.coeff(nd);
        ((0..nd).map(|i| p.coeff(i) - d * den.coeff(i)).collect(), d)
    };
    if p_is_row(&q) {
        let a = comp.a.transpose();
        let mut b = DMatrix::zeros(nd, q.cols);
        let mut d = DMatrix::zeros(1, q.cols);
        for (j, n) in nums.iter().enumerate() {
            let (r, dj) = resid(n);
            for i in 0..nd {
                b[(i, j)] = r[i];
            }
            d[(0, j)] = dj;
        }
        let mut c = DMatrix::zeros(1, nd);
        if nd > 0 {
            c[(0, nd - 1)] = 1.0;
        }
        StateSpace::new(a, b, c, d)
    } else if q.cols == 1 {
        let mut b = DMatrix::zeros(nd, 1);
        if nd > 0 {
            b[(nd - 1, 0)] = 1.0;
        }
        let mut c = DMatrix::zeros(q.rows, nd);
        let mut d = DMatrix::zeros(q.rows, 1);
        for (i, n) in nums.iter().enumerate() {
            let (r, di) = resid(n);
            for j in 0..nd {
                c[(i, j)] = r[j];
            }
            d[(i, 0)] = di;
        }
        StateSpace::new(comp.a.clone(), b, c, d)
    } else {
        Err(Error::DimensionMismatch("realize_rational needs a row or a column".into()))
    }
}

fn p_is_row(q: &QrMatrix) -> bool {
    q.rows == 1
}

/// State matrix of the loop `u = −K y` around `G`.
pub fn closed_loop_matrix(g: &StateSpace, k: &StateSpace) -> Result<DMatrix<f64>> {
    let (ng, nk) = (g.order(), k.order());
    let m = DMatrix::<f64>::identity(k.outputs(), k.outputs()) + &k.d * &g.d;
    let mi = m.try_inverse().ok_or_else(|| Error::InvalidParameter("ill-posed loop".into()))?;
    // u = −mi (Ck xk + Dk Cg xg)
    let ux = -&mi * &k.d * &g.c;
    let uk = -&mi * &k.c;
    // y = Cg xg + Dg u
    let yx = &g.c + &g.d * &ux;
    let yk = &g.d * &uk;
    let mut a = DMatrix::zeros(ng + nk, ng + nk);
    a.view_mut((0, 0), (ng, ng)).copy_from(&(&g.a + &g.b * &ux));
    a.view_mut((0, ng), (ng, nk)).copy_from(&(&g.b * &uk));
    a.view_mut((ng, 0), (nk, ng)).copy_from(&(&k.b * &yx));
    a.view_mut((ng, ng), (nk, nk)).copy_from(&(&k.a + &k.b * &yk));
    Ok(a)
}

fn closed_loop_eigs(g: &StateSpace, structure: &ControllerStructure, x: &[f64]) -> Result<Vec<C>> {
    if !structure.is_finite_dimensional() {
        return Err(Error::NotFiniteDimensional);
    }
    let kv = structure.value(x)?;
    let k = match structure {
        ControllerStructure::Static { rows, cols } => StateSpace::new(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, *cols),
            DMatrix::zeros(*rows, 0),
            DMatrix::from_row_slice(*rows, *cols, x),
        )?,
        ControllerStructure::ScheduledQuadratic { .. } => {
            let d = kv.eval(C::new(0.0, 0.0))?.map(|z| z.re);
            StateSpace::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, d.ncols()), DMatrix::zeros(d.nrows(), 0), d)?
        }
        _ => realize_rational(&kv)?,
    };
    let a = closed_loop_matrix(g, &k)?;
    Ok(a.complex_eigenvalues().iter().copied().collect())
}

/// Pole-region penalty and its finite-difference gradient.
fn pole_penalty_with_gradient(
    g: &StateSpace,
    structure: &ControllerStructure,
    x: &[f64],
    decay: f64,
    damping: f64,
    maxfreq: f64,
) -> Result<(f64, Vec<f64>)> {
    let p = pole_region_penalty(&closed_loop_eigs(g, structure, x)?, decay, damping, maxfreq);
    let mut grad = vec![0.0; x.len()];
    for k in 0..x.len() {
        let h = 1e-7 * (1.0 + x[k].abs());
        let mut xp = x.to_vec();
        xp[k] += h;
        let pp = pole_region_penalty(&closed_loop_eigs(g, structure, &xp)?, decay, damping, maxfreq);
        grad[k] = (pp - p) / h;
    }
    Ok((p, grad))
}

struct Point {
    x: Vec<f64>,
    gamma: f64,
    merit: f64,
    grad: Vec<f64>,
    residuals: Vec<(String, f64)>,
    worst: f64,
    /// Merit as `max` of `γ` and `γ + w·rᵢ`, each with its subgradient.
    pieces: Vec<(f64, Vec<f64>)>,
    cert: NyquistCertificate,
    nodes: usize,
}

impl SynthesisProblem {
    fn controller(&self, x: &[f64]) -> Result<TransferExpr> {
        self.structure.build(x)
    }

    /// Nyquist gate at `x`.
    pub fn gate_check(&self, x: &[f64]) -> Result<NyquistCertificate> {
        let k = self.structure.value(x)?;
        let info = self.gate.info(&self.structure, x)?;
        if matches!(self.gate, Gate::Prestabilized { .. }) && info.n_p > 0 {
            // unstable increments are excluded from the pre-stabilized class
            let mut cert = nyquist::check_stability(self.gate.plant(), &k, &info, &self.options.nyquist)?;
            cert.verdict = Verdict3::Unstable;
            return Ok(cert);
        }
        nyquist::check_stability(self.gate.plant(), &k, &info, &self.options.nyquist)
    }

    /// Certified objective value at `x` (no gate).
    pub fn objective_value(&self, x: &[f64]) -> Result<f64> {
        let k = self.controller(x)?;
        let o = &self.options;
        match &self.objective {
            Objective::Hinf(ch) => Ok(normest::hinf_norm(&ch(&k)?, o.theta, &o.hinf)?.gamma),
            Objective::H2(ch) => Ok(normest::h2_integral(&ch(&k)?, o.theta, o.h2_cutoff, None)?.norm),
        }
    }

    /// Objective, constraint residuals and subgradient at `x`; the merit is `γ + w·max(0, r)`.
    fn evaluate(&self, x: &[f64], cert: NyquistCertificate) -> Result<Point> {
        let o = &self.options;
        let k = self.controller(x)?;
        let n = self.structure.dim();
        let (gamma, mut grad, mut nodes) = match &self.objective {
            Objective::Hinf(ch) => {
                let (est, g) = hinf_with_gradient(&ch(&k)?, &self.structure, x, o.theta, &o.hinf)?;
                (est.gamma, g, est.node_count())
            }
            Objective::H2(ch) => {
                let (est, g) = h2_with_gradient(&ch(&k)?, &self.structure, x, o.theta, o.h2_cutoff)?;
                (est.norm, g, est.nodes)
            }
        };
        let mut residuals = vec![];
        let mut worst = f64::NEG_INFINITY;
        let mut worst_grad = vec![0.0; n];
        let mut pieces = vec![(gamma, grad.clone())];
        for c in &self.constraints {
            let (r, g) = match c {
                Constraint::DiskMargin { alpha } => {
                    let t = input_sensitivity(self.gate.plant(), &k)?;
                    let (est, g) = hinf_with_gradient(&t, &self.structure, x, o.theta, &o.hinf)?;
                    nodes += est.node_count();
                    (est.gamma - 1.0 / alpha, g)
                }
                Constraint::MaxNorm { channel, bound, .. } => {
                    let (est, g) = hinf_with_gradient(&channel(&k)?, &self.structure, x, o.theta, &o.hinf)?;
                    nodes += est.node_count();
                    (est.gamma - bound, g)
                }
                Constraint::ConeRegion { alpha, r } => {
                    let (res, w) = cone_constraint(&cert.plan.values, *alpha, *r);
                    let i = res.iter().enumerate().fold(0, |b, (i, v)| if *v > res[b] { i } else { b });
                    let f = xfer_return_difference(self.gate.plant(), &k)?;
                    let s = C::new(0.0, cert.plan.nodes[i]);
                    let fv = cert.plan.values[i];
                    let jac = tangent_jac(&f, &self.structure, x);
                    let mut g = vec![0.0; n];
                    if w > 0.0 {
                        for (kk, gk) in g.iter_mut().enumerate() {
                            let d = jac(kk, s)?[(0, 0)];
                            *gk = -alpha * d.re - 2.0 * fv.im * d.im;
                        }
                    }
                    // signed residual: negative margin when strictly inside the feasible set
                    (if w > 0.0 { w } else { -cone_slack(&cert.plan.values, *alpha, *r) }, g)
                }
                Constraint::SoftPoleRegion { plant, decay, damping, maxfreq } => {
                    let (p, g) = pole_penalty_with_gradient(plant, &self.structure, x, *decay, *damping, *maxfreq)?;
                    (p, g)
                }
            };
            residuals.push((c.name(), r));
            pieces.push((gamma + o.penalty * r, grad.iter().zip(&g).map(|(a, b)| a + o.penalty * b).collect()));
            if r > worst {
                worst = r;
                worst_grad = g;
            }
        }
        let mut merit = gamma;
        if worst > 0.0 {
            merit += o.penalty * worst;
            for (a, b) in grad.iter_mut().zip(&worst_grad) {
                *a += o.penalty * b;
            }
        }
        Ok(Point { x: x.to_vec(), gamma, merit, grad, residuals, worst: worst.max(0.0), pieces, cert, nodes })
    }
}

fn xfer_return_difference(g: &TransferExpr, k: &TransferExpr) -> Result<TransferExpr> {
    crate::xfer::return_difference(g, k)
}

fn cone_slack(values: &[C], alpha: f64, r: f64) -> f64 {
    values.iter().map(|f| f.im * f.im - alpha * (r - f.re)).fold(f64::INFINITY, f64::min).max(0.0)
}

// ---------------------------------------------------------------- bundle model

struct Plane {
    z: DVector<f64>,
    value: f64,
    slope: DVector<f64>,
}

fn project_simplex(v: &mut [f64]) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let mut css = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// `min_d max_j (a_j + g_j·d) + ‖d‖²/(2τ)` through its simplex dual, solved by FISTA.
fn solve_model(a: &[f64], g: &[DVector<f64>], tau: f64) -> (DVector<f64>, f64) {
    let m = a.len();
    let n = g[0].len();
    let lip = tau * g.iter().map(|v| v.norm_squared()).sum::<f64>().max(1e-300);
    let mut lam = vec![1.0 / m as f64; m];
    let mut y = lam.clone();
    let mut t: f64 = 1.0;
    let combo = |w: &[f64]| -> DVector<f64> {
        let mut s = DVector::zeros(n);
        for (wi, gi) in w.iter().zip(g) {
            s += gi * *wi;
        }
        s
    };
    for _ in 0..400 {
        let gy = combo(&y);
        let mut next: Vec<f64> = (0..m).map(|j| y[j] - (-a[j] + tau * g[j].dot(&gy)) / lip).collect();
        project_simplex(&mut next);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        for j in 0..m {
            y[j] = next[j] + (t - 1.0) / tn * (next[j] - lam[j]);
        }
        lam = next;
        t = tn;
    }
    let d = -combo(&lam) * tau;
    let model = (0..m).map(|j| a[j] + g[j].dot(&d)).fold(f64::NEG_INFINITY, f64::max);
    (d, model)
}

const DOWNSHIFT: f64 = 1e-2;

/// Run the bundle trust-region method from `x0`.
pub fn optimize(problem: &SynthesisProblem, x0: &[f64]) -> Result<SynthesisResult> {
    let o = &problem.options;
    let n = problem.structure.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, structure needs {n}", x0.len())));
    }
    let cert0 = problem.gate_check(x0)?;
    if cert0.verdict != Verdict3::Stable {
        return Err(Error::InitialPointUnstable);
    }
    let rms = (x0.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt().max(1e-3);
    let scale: Vec<f64> = x0.iter().map(|v| v.abs().max(0.1 * rms)).collect();
    let to_x = |z: &DVector<f64>| -> Vec<f64> { z.iter().zip(&scale).map(|(a, s)| a * s).collect() };
    let to_zgrad = |g: &[f64]| -> DVector<f64> { DVector::from_iterator(n, g.iter().zip(&scale).map(|(a, s)| a * s)) };

    let winding0 = cert0.winding;
    let mut cur = problem.evaluate(x0, cert0)?;
    let mut zc = DVector::from_iterator(n, x0.iter().zip(&scale).map(|(a, s)| a / s));
    let initial_gamma = cur.gamma;
    let planes_of = |pt: &Point, z: &DVector<f64>| -> Vec<Plane> {
        pt.pieces.iter().map(|(v, g)| Plane { z: z.clone(), value: *v, slope: to_zgrad(g) }).collect()
    };
    let mut bundle: Vec<Plane> = planes_of(&cur, &zc);
    let mut tau = o.initial_radius / to_zgrad(&cur.grad).norm().max(1e-12);
    let mut history = vec![IterateRecord {
        iter: 0,
        x: cur.x.clone(),
        gamma: cur.gamma,
        merit: cur.merit,
        step_norm: 0.0,
        verdict: cur.cert.verdict,
        winding: cur.cert.winding,
        accepted: true,
        backtracks: 0,
        barrier_planes: 0,
        residuals: cur.residuals.clone(),
        radius: tau,
        nodes: cur.nodes,
    }];
    let mut barrier_planes = 0usize;
    let mut stalls = 0usize;
    let mut stop = StopReason::IterationCap;
    let mut fresh = false;

    for iter in 1..=o.max_iter {
        let (a, g): (Vec<f64>, Vec<DVector<f64>>) = bundle
            .iter()
            .map(|p| {
                let lin = p.value + p.slope.dot(&(&zc - &p.z)) - cur.merit;
                let dist = (&zc - &p.z).norm_squared();
                (lin.min(-DOWNSHIFT * dist), p.slope.clone())
            })
            .unzip();
        let (d, model) = solve_model(&a, &g, tau);
        let pred = -model;
        let dn = d.norm();
        if dn < o.step_tol {
            stop = StopReason::StepTolerance;
            break;
        }
        if pred < o.theta / 10.0 {
            if fresh {
                stop = StopReason::ModelDecrease;
                break;
            }
            // stale cutting planes or a collapsed radius: restart from the current linearization
            bundle = planes_of(&cur, &zc);
            fresh = true;
            continue;
        }
        fresh = false;

        // α-backtracking into the stabilizing set
        let mut alpha = 1.0;
        let mut backtracks = 0;
        let mut trial = None;
        let mut last_cert = None;
        while backtracks <= o.backtrack_max {
            let zt = &zc + &d * alpha;
            let xt = to_x(&zt);
            match problem.gate_check(&xt) {
                Ok(c) if c.verdict == Verdict3::Stable && c.winding == winding0 => {
                    trial = Some((zt, xt, c));
                    break;
                }
                Ok(c) => last_cert = Some(c),
                Err(_) => {}
            }
            alpha *= 0.5;
            backtracks += 1;
        }
        let Some((zt, xt, cert)) = trial else {
            stalls += 1;
            history.push(IterateRecord {
                iter,
                x: to_x(&(&zc + &d)),
                gamma: f64::NAN,
                merit: f64::NAN,
                step_norm: dn,
                verdict: last_cert.as_ref().map_or(Verdict3::Inconclusive, |c| c.verdict),
                winding: last_cert.as_ref().map_or(0, |c| c.winding),
                accepted: false,
                backtracks,
                barrier_planes,
                residuals: vec![],
                radius: tau,
                nodes: 0,
            });
            if stalls >= 3 {
                return Err(Error::StalledAtStabilityBoundary);
            }
            tau *= 0.1;
            continue;
        };
        stalls = 0;

        let point = match problem.evaluate(&xt, cert) {
            Ok(p) => p,
            Err(_) => {
                tau *= 0.5;
                continue;
            }
        };
        if backtracks > 0 {
            // repelling plane from log S at the fallback point
            let k = problem.structure.build(&xt)?;
            let t = input_sensitivity(problem.gate.plant(), &k)?;
            if let Ok((est, gs)) = hinf_with_gradient(&t, &problem.structure, &xt, o.theta, &o.hinf) {
                let weight = point.merit.abs().max(1.0) / est.gamma.max(1e-12);
                let slope = to_zgrad(&gs) * weight;
                bundle.push(Plane { z: zt.clone(), value: point.merit, slope });
                barrier_planes += 1;
            }
        }
        let step_pred = pred * alpha;
        let actual = cur.merit - point.merit;
        let ratio = actual / step_pred.max(1e-300);
        let feasible = point.worst <= cur.worst.max(0.0) + 1e-12;
        let accepted = ratio >= o.ratio_low && feasible;
        history.push(IterateRecord {
            iter,
            x: point.x.clone(),
            gamma: point.gamma,
            merit: point.merit,
            step_norm: dn * alpha,
            verdict: point.cert.verdict,
            winding: point.cert.winding,
            accepted,
            backtracks,
            barrier_planes,
            residuals: point.residuals.clone(),
            radius: tau,
            nodes: point.nodes,
        });
        let new_planes = planes_of(&point, &zt);
        if accepted {
            if ratio >= o.ratio_high && backtracks == 0 {
                tau *= 2.0;
            }
            zc = zt;
            cur = point;
        } else {
            tau *= 0.5;
        }
        bundle.extend(new_planes);
        while bundle.len() > o.bundle_capacity {
            bundle.remove(0);
        }
        // the current linearizations stay in the bundle
        if !bundle.iter().any(|p| (&p.z - &zc).norm() == 0.0) {
            bundle.extend(planes_of(&cur, &zc));
        }
    }
    Ok(SynthesisResult {
        x: cur.x.clone(),
        gamma: cur.gamma,
        merit: cur.merit,
        initial_gamma,
        winding: cur.cert.winding,
        stop,
        history,
    })
}
