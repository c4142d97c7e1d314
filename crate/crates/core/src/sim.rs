//! Time-domain closed-loop simulation of both plants under rational-plus-delay controllers.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plants::{ParabolicPlant, WavePlant};
use crate::xfer::{Polynomial, QrMatrix, StateSpace, TransferExpr, C};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
enum Source {
    Input(usize),
    Output,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Channel {
    source: Source,
    delay: f64,
}

/// Sampled signal history for delay taps, interpolated linearly.
#[derive(Clone, Debug)]
struct History {
    dt: f64,
    /// Value at step `start + i`.
    values: VecDeque<f64>,
    start: usize,
    keep: usize,
}

impl History {
    fn new(dt: f64, max_delay: f64) -> Self {
        History { dt, values: VecDeque::new(), start: 0, keep: (max_delay / dt).ceil() as usize + 3 }
    }

    fn push(&mut self, v: f64) {
        self.values.push_back(v);
        while self.values.len() > self.keep {
            self.values.pop_front();
            self.start += 1;
        }
    }

    /// Value at time `t` (zero before the first sample).
    fn at(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let k = t / self.dt;
        let i = k.floor() as usize;
        let frac = k - i as f64;
        let get = |j: usize| -> f64 {
            if j < self.start {
                0.0
            } else {
                self.values.get(j - self.start).copied().unwrap_or_else(|| self.values.back().copied().unwrap_or(0.0))
            }
        };
        if frac < 1e-12 {
            get(i)
        } else {
            (1.0 - frac) * get(i) + frac * get(i + 1)
        }
    }
}

/// Discrete-time realization of a single-output controller `u = Σ Kᵢ yᵢ` with delay taps.
///
/// The continuous realization is `p₀(d/dt) u = Σ_c b_c(d/dt) w_c` in observable form, where the
/// channels `w_c` are delayed inputs and delayed copies of `u`; it is discretized by the
/// trapezoidal rule.
#[derive(Clone, Debug)]
pub struct Realization {
    inputs: usize,
    channels: Vec<Channel>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    d: DVector<f64>,
    dt: f64,
    m: DMatrix<f64>,
    n: DMatrix<f64>,
    feed: DVector<f64>,
    x: DVector<f64>,
    w_prev: DVector<f64>,
    step: usize,
    hist_in: Vec<History>,
    hist_out: History,
}

impl Realization {
    /// Realize a `1×m` controller built from rational, delay and quasi-rational blocks.
    pub fn new(k: &TransferExpr, dt: f64) -> Result<Self> {
        if k.rows() != 1 {
            return Err(Error::NonRealizableController("controller must have one output".into()));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("time step must be positive".into()));
        }
        let q = QrMatrix::from_expr(k).map_err(|e| match e {
            Error::NonRealizableController(m) => Error::NonRealizableController(m),
            other => other,
        })?;
        let shift = q.den.terms().iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let principal = q
            .den
            .terms()
            .iter()
            .find(|t| t.1 == shift)
            .map(|t| t.0.clone())
            .ok_or_else(|| Error::NonRealizableController("zero denominator".into()))?;
        let lead = principal.leading();
        let p0 = principal.scale(1.0 / lead);
        let nd = p0.degree();
        let mut channels = vec![];
        let mut polys: Vec<Polynomial> = vec![];
        for (j, num) in q.num.iter().enumerate() {
            for (p, th) in num.terms() {
                let delay = th - shift;
                if delay < -1e-12 {
                    return Err(Error::NonRealizableController("non-causal delay".into()));
                }
                channels.push(Channel { source: Source::Input(j), delay: delay.max(0.0) });
                polys.push(p.scale(1.0 / lead));
            }
        }
        for (p, th) in q.den.terms() {
            if *th == shift {
                continue;
            }
            let delay = th - shift;
            if delay < dt - 1e-12 {
                return Err(Error::NonRealizableController(format!("output delay {delay} below the time step")));
            }
            channels.push(Channel { source: Source::Output, delay });
            polys.push(p.scale(-1.0 / lead));
        }
        for (ch, p) in channels.iter().zip(&polys) {
            if !p.is_zero() && p.degree() > nd {
                return Err(Error::NonRealizableController("improper controller".into()));
            }
            if ch.delay > 0.0 && ch.delay < dt - 1e-12 {
                return Err(Error::NonRealizableController(format!("delay {} below the time step", ch.delay)));
            }
        }
        let nch = channels.len();
        let comp = StateSpace::from_tf(&Polynomial::one(), &p0)?;
        let a = comp.a.transpose();
        let mut b = DMatrix::zeros(nd, nch);
        let mut d = DVector::zeros(nch);
        for (c, p) in polys.iter().enumerate() {
            let dc = p.coeff(nd);
            d[c] = dc;
            for i in 0..nd {
                b[(i, c)] = p.coeff(i) - dc * p0.coeff(i);
            }
        }
        let mut cvec = DVector::zeros(nd);
        if nd > 0 {
            cvec[nd - 1] = 1.0;
        }
        let eye = DMatrix::<f64>::identity(nd, nd);
        let lhs = &eye - &a * (0.5 * dt);
        let inv = lhs.try_inverse().ok_or_else(|| Error::NonRealizableController("trapezoidal pencil singular".into()))?;
        let m = &inv * (&eye + &a * (0.5 * dt));
        let n = &inv * &b * (0.5 * dt);
        let feed = n.transpose() * &cvec + &d;
        let max_delay = channels.iter().map(|c| c.delay).fold(0.0, f64::max);
        let inputs = k.cols();
        Ok(Realization {
            inputs,
            channels,
            a,
            b,
            c: cvec,
            d,
            dt,
            m,
            n,
            feed,
            x: DVector::zeros(nd),
            w_prev: DVector::zeros(nch),
            step: 0,
            hist_in: (0..inputs).map(|_| History::new(dt, max_delay)).collect(),
            hist_out: History::new(dt, max_delay),
        })
    }

    pub fn order(&self) -> usize {
        self.x.len()
    }

    /// Continuous-time response of the realized structure at `s`, `1×m`.
    pub fn frequency_response(&self, s: C) -> Result<Vec<C>> {
        let nd = self.order();
        let mut res = DMatrix::<C>::zeros(nd, nd);
        for i in 0..nd {
            for j in 0..nd {
                res[(i, j)] = if i == j { s } else { C::new(0.0, 0.0) } - self.a[(i, j)];
            }
        }
        let lu = res.lu();
        let mut gain_in = vec![C::new(0.0, 0.0); self.inputs];
        let mut gain_out = C::new(0.0, 0.0);
        for (ci, ch) in self.channels.iter().enumerate() {
            let col = DVector::<C>::from_fn(nd, |i, _| C::new(self.b[(i, ci)], 0.0));
            let x = if nd > 0 { lu.solve(&col).ok_or_else(|| Error::singular(s))? } else { col };
            let h = x.iter().zip(self.c.iter()).map(|(a, b)| a * b).sum::<C>() + self.d[ci];
            let h = h * (-s * ch.delay).exp();
            match ch.source {
                Source::Input(j) => gain_in[j] += h,
                Source::Output => gain_out += h,
            }
        }
        let den = C::new(1.0, 0.0) - gain_out;
        Ok(gain_in.into_iter().map(|g| g / den).collect())
    }

    fn known_channels(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| {
                if ch.delay == 0.0 {
                    return 0.0;
                }
                match ch.source {
                    Source::Input(j) => self.hist_in[j].at(t - ch.delay),
                    Source::Output => self.hist_out.at(t - ch.delay),
                }
            }),
        )
    }

    /// Output at the next step as `c + F·y`, before the new inputs `y` are known.
    pub fn step_prepare(&self) -> (f64, Vec<f64>) {
        let t = (self.step + 1) as f64 * self.dt;
        let w = self.known_channels(t);
        let mx = &self.m * &self.x + &self.n * &self.w_prev;
        let mut c0 = self.c.dot(&mx) + self.feed.dot(&w);
        if self.order() == 0 {
            c0 = self.feed.dot(&w);
        }
        let mut f = vec![0.0; self.inputs];
        for (ci, ch) in self.channels.iter().enumerate() {
            if let (Source::Input(j), true) = (ch.source, ch.delay == 0.0) {
                f[j] += self.feed[ci];
            }
        }
        (c0, f)
    }

    /// Advance with the new inputs and return the controller output.
    pub fn step_commit(&mut self, y: &[f64]) -> f64 {
        let t = (self.step + 1) as f64 * self.dt;
        let mut w = self.known_channels(t);
        for (ci, ch) in self.channels.iter().enumerate() {
            if let (Source::Input(j), true) = (ch.source, ch.delay == 0.0) {
                w[ci] = y[j];
            }
        }
        self.x = &self.m * &self.x + &self.n * (&self.w_prev + &w);
        let out = self.c.dot(&self.x) + self.d.dot(&w);
        for (j, h) in self.hist_in.iter_mut().enumerate() {
            h.push_at(self.step + 1, y[j]);
        }
        self.hist_out.push_at(self.step + 1, out);
        self.w_prev = w;
        self.step += 1;
        out
    }

    /// Record the values at `t = 0` (zero state).
    fn init(&mut self, y0: &[f64]) -> f64 {
        let w = DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| match (ch.source, ch.delay == 0.0) {
                (Source::Input(j), true) => y0[j],
                _ => 0.0,
            }),
        );
        let out = self.d.dot(&w);
        for (j, h) in self.hist_in.iter_mut().enumerate() {
            h.push_at(0, y0[j]);
        }
        self.hist_out.push_at(0, out);
        self.w_prev = w;
        out
    }
}

impl History {
    fn push_at(&mut self, step: usize, v: f64) {
        debug_assert_eq!(step, self.start + self.values.len());
        self.push(v);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Initial {
    /// Parabolic default `ξ(L − ξ)`.
    Parabola,
    /// `sin(kπξ/L)`.
    Sine { mode: f64 },
    /// Values at the interior grid nodes.
    Samples { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_x: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Store the state surface every this many steps (0 = never).
    pub surface_every: usize,
    pub initial: Option<Initial>,
}

impl SimConfig {
    pub fn parabolic_default() -> Self {
        SimConfig { n_x: 100, dt: 0.01, t_end: 10.0, surface_every: 0, initial: None }
    }

    /// CFL = 1 on 200 cells.
    pub fn wave_default() -> Self {
        SimConfig { n_x: 200, dt: 1.0 / 200.0, t_end: 20.0, surface_every: 0, initial: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub control: Vec<f64>,
    pub energy: Vec<f64>,
    pub grid: Vec<f64>,
    pub surface_times: Vec<f64>,
    pub surface: Vec<Vec<f64>>,
}

impl Trajectory {
    fn record(&mut self, t: f64, y: &[f64], u: f64, e: f64) {
        self.times.push(t);
        self.outputs.push(y.to_vec());
        self.control.push(u);
        self.energy.push(e);
    }

    pub fn initial_energy(&self) -> f64 {
        self.energy.first().copied().unwrap_or(0.0)
    }

    pub fn final_energy(&self) -> f64 {
        self.energy.last().copied().unwrap_or(0.0)
    }

    /// Energy at the sample nearest to `t`.
    pub fn energy_at(&self, t: f64) -> f64 {
        let i = self.times.iter().position(|&s| s >= t - 1e-12).unwrap_or(self.times.len() - 1);
        self.energy[i]
    }

    /// First time after which the energy stays below `frac·E(0)`.
    pub fn settle_time(&self, frac: f64) -> Option<f64> {
        let lim = frac * self.initial_energy();
        let last_above = self.energy.iter().rposition(|&e| e > lim);
        match last_above {
            None => Some(0.0),
            Some(i) if i + 1 < self.times.len() => Some(self.times[i + 1]),
            _ => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.energy.iter().all(|e| e.is_finite()) && self.control.iter().all(|u| u.is_finite())
    }

    /// `t,u,y1..ym,E` rows.
    pub fn to_csv(&self) -> String {
        let m = self.outputs.first().map_or(0, |y| y.len());
        let mut s = String::from("t,u");
        for i in 1..=m {
            s.push_str(&format!(",y{i}"));
        }
        s.push_str(",E\n");
        for k in 0..self.times.len() {
            s.push_str(&format!("{:.6},{:.9e}", self.times[k], self.control[k]));
            for y in &self.outputs[k] {
                s.push_str(&format!(",{y:.9e}"));
            }
            s.push_str(&format!(",{:.9e}\n", self.energy[k]));
        }
        s
    }

    /// Dense surface: header with grid positions, one row per stored time.
    pub fn surface_csv(&self) -> String {
        let mut s = String::from("t");
        for x in &self.grid {
            s.push_str(&format!(",{x:.6}"));
        }
        s.push('\n');
        for (t, row) in self.surface_times.iter().zip(&self.surface) {
            s.push_str(&format!("{t:.6}"));
            for v in row {
                s.push_str(&format!(",{v:.6e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// How the loop is closed.
pub enum Drive<'a> {
    /// Exogenous input `u(t)`.
    Open(&'a dyn Fn(f64) -> f64),
    /// `u = −K y`.
    Feedback(&'a TransferExpr),
}

fn thomas(sub: f64, diag: f64, sup: f64, rhs: &mut [f64], scratch: &mut [f64]) {
    let n = rhs.len();
    scratch[0] = sup / diag;
    rhs[0] /= diag;
    for i in 1..n {
        let m = diag - sub * scratch[i - 1];
        scratch[i] = sup / m;
        rhs[i] = (rhs[i] - sub * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Crank–Nicolson method of lines for `x_t = x_ξξ + c x`, `x(0,t) = 0`, `x(L,t) = u(t − D)`.
pub fn simulate_parabolic(plant: &ParabolicPlant, drive: Drive, cfg: &SimConfig) -> Result<Trajectory> {
    plant.validate()?;
    let n = cfg.n_x;
    if n < 3 || !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
        return Err(Error::InvalidParameter("simulation needs n_x ≥ 3, dt > 0, t_end > 0".into()));
    }
    let (len, c) = (plant.length, plant.reaction);
    let h = len / (n + 1) as f64;
    let dt = cfg.dt;
    let grid: Vec<f64> = (1..=n).map(|i| i as f64 * h).collect();
    let mut x: Vec<f64> = match cfg.initial.clone().unwrap_or(Initial::Parabola) {
        Initial::Parabola => grid.iter().map(|&s| s * (len - s)).collect(),
        Initial::Sine { mode } => grid.iter().map(|&s| (mode * std::f64::consts::PI * s / len).sin()).collect(),
        Initial::Samples { values } => {
            if values.len() != n {
                return Err(Error::DimensionMismatch("initial samples must match n_x".into()));
            }
            values
        }
    };
    // sensor interpolation weights over [0, x₁..x_n, boundary]
    let weights: Vec<Vec<(usize, f64)>> = plant
        .sensors
        .iter()
        .map(|&xi| {
            let k = xi / h;
            let j = ((k + 1e-12).floor() as usize).min(n);
            let t = (k - j as f64).max(0.0);
            vec![(j, 1.0 - t), (j + 1, t)]
        })
        .collect();
    let sense = |x: &[f64], g: f64| -> Vec<f64> {
        weights
            .iter()
            .map(|w| {
                w.iter()
                    .map(|&(node, wt)| {
                        if wt == 0.0 || node == 0 {
                            0.0
                        } else if node <= n {
                            wt * x[node - 1]
                        } else {
                            wt * g
                        }
                    })
                    .sum()
            })
            .collect()
    };
    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() * h;

    let mut ctrl = match &drive {
        Drive::Feedback(k) => {
            if plant.delay < dt - 1e-12 {
                return Err(Error::InvalidParameter("feedback simulation needs D ≥ Δt".into()));
            }
            if k.cols() != plant.sensors.len() {
                return Err(Error::DimensionMismatch("controller inputs must match sensors".into()));
            }
            Some(Realization::new(k, dt)?)
        }
        Drive::Open(_) => None,
    };
    let mut u_hist = History::new(dt, plant.delay);
    let boundary = |u_hist: &History, t: f64, drive: &Drive| -> f64 {
        match drive {
            Drive::Open(f) => {
                let tt = t - plant.delay;
                if tt < 0.0 {
                    0.0
                } else {
                    f(tt)
                }
            }
            Drive::Feedback(_) => u_hist.at(t - plant.delay),
        }
    };

    let mut tr = Trajectory { grid: grid.clone(), ..Default::default() };
    let g0 = boundary(&u_hist, 0.0, &drive);
    let y0 = sense(&x, g0);
    let u0 = match &mut ctrl {
        Some(r) => -r.init(&y0),
        None => match &drive {
            Drive::Open(f) => f(0.0),
            _ => 0.0,
        },
    };
    u_hist.push_at(0, u0);
    tr.record(0.0, &y0, u0, energy(&x));
    if cfg.surface_every > 0 {
        tr.surface_times.push(0.0);
        tr.surface.push(x.clone());
    }

    let steps = (cfg.t_end / dt).round() as usize;
    let r = dt / (h * h);
    let (sub, diag, sup) = (-0.5 * r, 1.0 + r - 0.5 * dt * c, -0.5 * r);
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut g_prev = g0;
    for k in 1..=steps {
        let t = k as f64 * dt;
        let g = boundary(&u_hist, t, &drive);
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { x[i - 1] };
            let right = if i + 1 == n { g_prev } else { x[i + 1] };
            rhs[i] = x[i] + 0.5 * r * (left - 2.0 * x[i] + right) + 0.5 * dt * c * x[i];
        }
        rhs[n - 1] += 0.5 * r * g;
        thomas(sub, diag, sup, &mut rhs, &mut scratch);
        x.copy_from_slice(&rhs);
        let y = sense(&x, g);
        let u = match &mut ctrl {
            Some(re) => -re.step_commit(&y),
            None => match &drive {
                Drive::Open(f) => f(t),
                _ => 0.0,
            },
        };
        u_hist.push_at(k, u);
        g_prev = g;
        let e = energy(&x);
        tr.record(t, &y, u, e);
        if cfg.surface_every > 0 && k % cfg.surface_every == 0 {
            tr.surface_times.push(t);
            tr.surface.push(x.clone());
        }
        if !e.is_finite() {
            break;
        }
    }
    Ok(tr)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveInitial {
    /// `x(ξ, 0) = amplitude·sin(πξ)`.
    pub amplitude: f64,
}

/// Upwind transport of the Riemann invariants `R = x_t − x_ξ`, `S = x_t + x_ξ` with the
/// anti-damping reflection `R = Q S` at `ξ = 0` and Neumann actuation `S = R + 2u` at `ξ = 1`.
pub fn simulate_wave(plant: &WavePlant, drive: Drive, cfg: &SimConfig) -> Result<Trajectory> {
    let nc = cfg.n_x;
    if nc < 2 || !(cfg.dt > 0.0) || !(cfg.t_end > 0.0) {
        return Err(Error::InvalidParameter("simulation needs n_x ≥ 2, dt > 0, t_end > 0".into()));
    }
    let h = 1.0 / nc as f64;
    let dt = cfg.dt;
    let lambda = dt / h;
    if lambda > 1.0 + 1e-9 {
        return Err(Error::CflViolation(lambda));
    }
    let exact = (lambda - 1.0).abs() < 1e-9;
    let q = plant.q;
    let big_q = plant.big_q();
    let grid: Vec<f64> = (0..=nc).map(|i| i as f64 * h).collect();
    let pi = std::f64::consts::PI;
    // x(ξ,0) from the initial profile; v = 0, w = x_ξ
    let profile: Vec<f64> = match cfg.initial.clone().unwrap_or(Initial::Sine { mode: 1.0 }) {
        Initial::Sine { mode } => grid.iter().map(|&s| (mode * pi * s).sin()).collect(),
        Initial::Parabola => grid.iter().map(|&s| s * (1.0 - s)).collect(),
        Initial::Samples { values } => {
            if values.len() != nc + 1 {
                return Err(Error::DimensionMismatch("wave initial samples must have n_x + 1 values".into()));
            }
            values
        }
    };
    let slope = |i: usize| -> f64 {
        if i == 0 {
            (profile[1] - profile[0]) / h
        } else if i == nc {
            (profile[nc] - profile[nc - 1]) / h
        } else {
            (profile[i + 1] - profile[i - 1]) / (2.0 * h)
        }
    };
    let mut rr: Vec<f64> = (0..=nc).map(|i| -slope(i)).collect();
    let mut ss: Vec<f64> = (0..=nc).map(slope).collect();
    let mut x0 = profile[0];
    let mut x1 = profile[nc];
    let energy = |r: &[f64], s: &[f64]| -> f64 {
        let f = |i: usize| 0.25 * (r[i] * r[i] + s[i] * s[i]);
        let mut e = 0.5 * (f(0) + f(nc));
        for i in 1..nc {
            e += f(i);
        }
        e * h
    };
    let _ = q;

    let mut ctrl = match &drive {
        Drive::Feedback(k) => {
            if k.cols() != 3 {
                return Err(Error::DimensionMismatch("wave controller must read three outputs".into()));
            }
            Some(Realization::new(k, dt)?)
        }
        Drive::Open(_) => None,
    };

    let mut tr = Trajectory { grid: grid.clone(), ..Default::default() };
    // boundary consistency at t = 0 with u(0)
    let v0 = 0.5 * (rr[nc] + ss[nc]);
    let y0 = [x0, x1, v0];
    let u0 = match &mut ctrl {
        Some(r) => -r.init(&y0),
        None => match &drive {
            Drive::Open(f) => f(0.0),
            _ => 0.0,
        },
    };
    tr.record(0.0, &y0, u0, energy(&rr, &ss));
    if cfg.surface_every > 0 {
        tr.surface_times.push(0.0);
        tr.surface.push((0..=nc).map(|i| 0.5 * (ss[i] - rr[i])).collect());
    }
    let mut v0_prev = 0.5 * (rr[0] + ss[0]);
    let mut v1_prev = v0;
    let steps = (cfg.t_end / dt).round() as usize;
    let mut rn = vec![0.0; nc + 1];
    let mut sn = vec![0.0; nc + 1];
    for k in 1..=steps {
        let t = k as f64 * dt;
        if exact {
            rn[1..=nc].copy_from_slice(&rr[0..nc]);
            sn[0..nc].copy_from_slice(&ss[1..=nc]);
        } else {
            for i in 1..=nc {
                rn[i] = rr[i] - lambda * (rr[i] - rr[i - 1]);
            }
            for i in 0..nc {
                sn[i] = ss[i] + lambda * (ss[i + 1] - ss[i]);
            }
        }
        rn[0] = big_q * sn[0];
        let v0n = 0.5 * (rn[0] + sn[0]);
        let x0n = x0 + 0.5 * dt * (v0_prev + v0n);
        // y = base + g·u with g = [0, Δt/2, 1]
        let base = [x0n, x1 + 0.5 * dt * (v1_prev + rn[nc]), rn[nc]];
        let gvec = [0.0, 0.5 * dt, 1.0];
        let u = match &mut ctrl {
            Some(re) => {
                let (c0, f) = re.step_prepare();
                let fb: f64 = (0..3).map(|i| f[i] * base[i]).sum();
                let fg: f64 = (0..3).map(|i| f[i] * gvec[i]).sum();
                let den = 1.0 + fg;
                if den.abs() < 1e-12 {
                    return Err(Error::NonRealizableController("ill-posed boundary loop".into()));
                }
                -(c0 + fb) / den
            }
            None => match &drive {
                Drive::Open(f) => f(t),
                _ => 0.0,
            },
        };
        sn[nc] = rn[nc] + 2.0 * u;
        let y = [base[0], base[1] + gvec[1] * u, base[2] + u];
        if let Some(re) = &mut ctrl {
            let out = re.step_commit(&y);
            debug_assert!((out + u).abs() <= 1e-8 * (1.0 + u.abs()));
        }
        std::mem::swap(&mut rr, &mut rn);
        std::mem::swap(&mut ss, &mut sn);
        x0 = y[0];
        x1 = y[1];
        v0_prev = v0n;
        v1_prev = y[2];
        let e = energy(&rr, &ss);
        tr.record(t, &y, u, e);
        if cfg.surface_every > 0 && k % cfg.surface_every == 0 {
            tr.surface_times.push(t);
            tr.surface.push((0..=nc).map(|i| 0.5 * (ss[i] - rr[i])).collect());
        }
        if !e.is_finite() {
            break;
        }
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn history_interpolates() {
        let mut h = History::new(0.5, 2.0);
        for (i, v) in [0.0, 1.0, 2.0, 3.0].iter().enumerate() {
            h.push_at(i, *v);
        }
        assert_eq!(h.at(-1.0), 0.0);
        assert!((h.at(0.75) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn realization_matches_transfer() {
        let k = TransferExpr::hstack(vec![
            TransferExpr::rational(Polynomial::new(vec![1.0, 2.0]), Polynomial::new(vec![3.0, 1.0, 1.0])).unwrap(),
            TransferExpr::delay(0.5).unwrap().scale(0.3),
        ])
        .unwrap();
        let r = Realization::new(&k, 0.01).unwrap();
        let s = C::new(0.1, 2.0);
        let got = r.frequency_response(s).unwrap();
        let want = k.eval(s).unwrap();
        for j in 0..2 {
            assert!((got[j] - want[(0, j)]).norm() < 1e-12);
        }
    }

    #[test]
    fn static_gain_steps() {
        let k = TransferExpr::gain(1, 2, vec![2.0, -1.0]).unwrap();
        let mut r = Realization::new(&k, 0.1).unwrap();
        r.init(&[0.0, 0.0]);
        let (c0, f) = r.step_prepare();
        assert_eq!(c0, 0.0);
        assert_eq!(f, vec![2.0, -1.0]);
        assert_eq!(r.step_commit(&[1.0, 1.0]), 1.0);
    }
}
