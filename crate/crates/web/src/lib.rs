//! Browser bindings for the demo page in `www/`. Every export returns JSON text;
//! failures come back as `{"error": "..."}`.

use pdectl::nyquist::{self, NyquistOptions};
use pdectl::plants::{self, ParabolicPlant, WavePlant};
use pdectl::quasipoly;
use pdectl::sim::{self, Drive, SimConfig};
use pdectl::xfer::TransferExpr;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_POINTS: usize = 400;

fn respond(r: pdectl::Result<Value>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

fn controller(name: &str, q: f64) -> pdectl::Result<TransferExpr> {
    plants::fixture_controllers(q)
        .remove(name)
        .ok_or_else(|| pdectl::Error::InvalidParameter(format!("unknown controller {name}")))
}

fn is_wave(plant: &str) -> pdectl::Result<bool> {
    match plant {
        "parabolic" => Ok(false),
        "wave" => Ok(true),
        other => Err(pdectl::Error::InvalidParameter(format!("unknown plant {other}"))),
    }
}

/// Evenly thinned indices, always keeping the last one.
fn thin(n: usize) -> Vec<usize> {
    let step = n.div_ceil(MAX_POINTS).max(1);
    let mut idx: Vec<usize> = (0..n).step_by(step).collect();
    if n > 0 && idx.last() != Some(&(n - 1)) {
        idx.push(n - 1);
    }
    idx
}

/// Fixture controller names available for a plant.
#[wasm_bindgen]
pub fn fixtures(plant: &str) -> String {
    respond(is_wave(plant).map(|wave| {
        let names: Vec<_> = plants::fixture_controllers(plants::SCHED_Q0)
            .into_keys()
            .filter(|n| n.starts_with("wave") == wave)
            .collect();
        json!(names)
    }))
}

/// Certified Nyquist test of a fixture loop, with the sampled polygon.
#[wasm_bindgen]
pub fn nyquist_check(plant: &str, name: &str, q: f64) -> String {
    respond(nyquist_value(plant, name, q))
}

pub fn nyquist_value(plant: &str, name: &str, q: f64) -> pdectl::Result<Value> {
    let k = controller(name, q)?;
    let info = plants::fixture_pole_info(name).unwrap_or_default();
    let opts = NyquistOptions::default();
    let cert = if is_wave(plant)? {
        let k0 = plants::wave_adhoc_controller(q);
        let g0 = plants::wave_prestabilized(q, &k0)?;
        nyquist::check_stability_prestabilized(&g0, &k, &k0, &info, &opts)?
    } else {
        let p = ParabolicPlant::default();
        nyquist::check_stability(&p.tf()?, &k, &p.pole_info().merge(&info), &opts)?
    };
    let plan = &cert.plan;
    let idx = thin(plan.nodes.len());
    Ok(json!({
        "verdict": format!("{:?}", cert.verdict),
        "winding": cert.winding,
        "expected": cert.expected,
        "nodes": plan.nodes.len(),
        "cutoff": plan.cutoff,
        "min_abs": cert.min_abs,
        "omega": idx.iter().map(|&i| plan.nodes[i]).collect::<Vec<_>>(),
        "re": idx.iter().map(|&i| plan.values[i].re).collect::<Vec<_>>(),
        "im": idx.iter().map(|&i| plan.values[i].im).collect::<Vec<_>>(),
    }))
}

/// Energy curve of a closed-loop simulation; an empty name runs the open loop.
#[wasm_bindgen]
pub fn simulate(plant: &str, name: &str, q: f64, t_end: f64) -> String {
    respond(simulate_value(plant, name, q, t_end))
}

pub fn simulate_value(plant: &str, name: &str, q: f64, t_end: f64) -> pdectl::Result<Value> {
    if !(t_end > 0.0 && t_end <= 200.0) {
        return Err(pdectl::Error::InvalidParameter("t_end must be in (0, 200]".into()));
    }
    let k = if name.is_empty() { None } else { Some(controller(name, q)?) };
    let zero = |_: f64| 0.0;
    let drive = match &k {
        Some(k) => Drive::Feedback(k),
        None => Drive::Open(&zero),
    };
    let tr = if is_wave(plant)? {
        let cfg = SimConfig { t_end, ..SimConfig::wave_default() };
        sim::simulate_wave(&WavePlant::new(q)?, drive, &cfg)?
    } else {
        let cfg = SimConfig { t_end, ..SimConfig::parabolic_default() };
        sim::simulate_parabolic(&ParabolicPlant::default(), drive, &cfg)?
    };
    let idx = thin(tr.times.len());
    Ok(json!({
        "finite": tr.is_finite(),
        "t": idx.iter().map(|&i| tr.times[i]).collect::<Vec<_>>(),
        "energy": idx.iter().map(|&i| tr.energy[i]).collect::<Vec<_>>(),
        "control": idx.iter().map(|&i| tr.control[i]).collect::<Vec<_>>(),
        "ratio": tr.final_energy() / tr.initial_energy(),
    }))
}

/// Largest delay keeping s² + x₁s + (x₂s + x₃)e^{-hs} stable.
#[wasm_bindgen]
pub fn delay_margin(x1: f64, x2: f64, x3: f64) -> String {
    respond(quasipoly::h_sigma0(x1, x2, x3).map(|h| json!({ "h": if h.is_finite() { json!(h) } else { json!("inf") } })))
}
