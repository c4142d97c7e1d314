use pdectl::normest::{hinf_norm, HinfOptions, NormEstimate};
use pdectl::nyquist::{self, NyquistCertificate, NyquistOptions, Verdict3};
use pdectl::plants::{self, ControllerStructure};
use pdectl::quasipoly;
use pdectl::sim::{self, Drive, Trajectory};
use pdectl::synth::{self, Constraint, Gate, Objective, SynthOptions, SynthesisProblem, SynthesisResult};
use pdectl::xfer::{Polynomial, TransferExpr};
use serde_json::{json, Value};

use crate::report::{hash_of, Bundle};
use crate::spec::{resolve_controller, Controller, ControllerFile, Plant, RunSpec};
use crate::CliError;

/// Sweep cutoff for wave loops, whose sensitivities do not decay.
const WAVE_CUTOFF: f64 = 200.0;

fn nyquist_options(spec: &RunSpec) -> NyquistOptions {
    NyquistOptions { seed: spec.seed, ..NyquistOptions::default() }
}

fn norm_json(e: &NormEstimate) -> Value {
    json!({
        "gamma": e.gamma,
        "theta": e.theta,
        "cutoff": e.cutoff,
        "tail_bound": e.tail_bound,
        "tail_certified": e.tail_certified,
        "nodes": e.node_count(),
        "sha256": hash_of(e),
    })
}

pub fn certificate_json(c: &NyquistCertificate) -> Value {
    json!({
        "verdict": c.verdict,
        "winding": c.winding,
        "expected": c.expected,
        "declared": c.declared,
        "cutoff": c.plan.cutoff,
        "nodes": c.plan.nodes.len(),
        "min_abs": c.min_abs,
        "tail": c.tail,
        "ray_seed": c.ray_seed,
        "sha256": hash_of(c),
    })
}

fn plant_json(p: &Plant) -> Value {
    serde_json::to_value(p).expect("plant")
}

/// Denominator `s + 1` and first numerator `(1 − q)(s + 1/64)` of the ad hoc base.
fn adhoc_polys(q: f64) -> (Polynomial, Polynomial) {
    let d = Polynomial::new(vec![1.0, 1.0]);
    let n1 = Polynomial::new(vec![1.0 / 64.0, 1.0]).scale(1.0 - q);
    (d, n1)
}

/// Quasi-polynomial check that the ad hoc base stabilizes the wave plant, with its delay margin.
pub fn wave_base_check(q: f64) -> Result<Value, CliError> {
    let (d, n1) = adhoc_polys(q);
    let stable = quasipoly::check_ad_hoc_stabilizer(&d, &d, &n1, q)?;
    let margin = quasipoly::h_sigma0(1.0, 1.0, 1.0 / 64.0)?;
    Ok(json!({ "base": "wave_adhoc", "base_stabilizes": stable, "delay_margin": margin }))
}

fn default_controller(plant: &Plant) -> &'static str {
    match plant {
        Plant::Parabolic(_) => "parabolic_initial",
        Plant::Wave(_) => "wave_adhoc",
    }
}

/// Right-half-plane pole count of the controller; a denominator zero on the axis is reported, not fatal.
fn controller_poles(c: &Controller) -> Value {
    let dens = plants::fixture_denominators(&c.label);
    if dens.is_empty() {
        return json!({ "rhp_poles": c.info.n_p, "source": "declared" });
    }
    let mut n = 0;
    for d in &dens {
        match quasipoly::rhp_count(d) {
            Ok(r) => n += r.count,
            Err(e) => return json!({ "rhp_poles": null, "source": "argument_principle", "note": e.to_string() }),
        }
    }
    json!({ "rhp_poles": n, "source": "argument_principle" })
}

pub fn analyze(spec: &RunSpec) -> Result<String, CliError> {
    let name = spec.controller.as_deref().unwrap_or(default_controller(&spec.plant));
    let c = resolve_controller(name, &spec.plant)?;
    let opts = nyquist_options(spec);
    let hinf = HinfOptions::default();
    let mut bundle = Bundle::default();
    let mut norms = serde_json::Map::new();
    let mut quasi = json!({ "controller": controller_poles(&c) });
    let (cert, verdict) = match &spec.plant {
        Plant::Parabolic(p) => {
            let g = p.tf()?;
            let info = p.pole_info().merge(&c.info);
            let cert = nyquist::check_stability(&g, &c.k, &info, &opts)?;
            if cert.verdict == Verdict3::Stable {
                let s = hinf_norm(&synth::input_sensitivity(&g, &c.k)?, spec.theta, &hinf)?;
                let ks = hinf_norm(&s_times_k(&g, &c.k)?, spec.theta, &hinf)?;
                bundle.add("bode.csv", s.bode_csv());
                norms.insert("input_sensitivity".into(), norm_json(&s));
                norms.insert("control_sensitivity".into(), norm_json(&ks));
            }
            let v = cert.verdict;
            (cert, v)
        }
        Plant::Wave(w) => {
            let k0 = plants::wave_adhoc_controller(w.q);
            let g0 = plants::wave_prestabilized(w.q, &k0)?;
            let base = wave_base_check(w.q)?;
            let base_ok = base["base_stabilizes"] == json!(true);
            quasi["prestabilization"] = base;
            let cert = nyquist::check_stability_prestabilized(&g0, &c.k, &k0, &c.info, &opts)?;
            let mut v = cert.verdict;
            if !base_ok {
                v = Verdict3::Inconclusive;
            }
            if v == Verdict3::Stable {
                let dk = c.k.sub_merged(&k0)?;
                let g0n = hinf_norm(&g0, spec.theta, &hinf)?;
                let fixed = HinfOptions { cutoff: Some(WAVE_CUTOFF), ..hinf };
                let dkn = hinf_norm(&dk, spec.theta, &fixed)?;
                let s = hinf_norm(&synth::input_sensitivity(&g0, &dk)?, spec.theta, &fixed)?;
                let margin = 1.0 / (g0n.gamma + spec.theta) - (dkn.gamma + spec.theta);
                bundle.add("bode.csv", s.bode_csv());
                norms.insert("prestabilized_plant".into(), norm_json(&g0n));
                norms.insert("increment".into(), norm_json(&dkn));
                norms.insert("input_sensitivity".into(), norm_json(&s));
                norms.insert("small_gain_margin".into(), json!(margin));
            }
            (cert, v)
        }
    };
    bundle.add("nyquist.csv", nyquist::nyquist_csv(&cert.plan));
    let report = json!({
        "command": "analyze",
        "plant": plant_json(&spec.plant),
        "controller": c.label,
        "theta": spec.theta,
        "seed": spec.seed,
        "verdict": verdict,
        "nyquist": certificate_json(&cert),
        "norms": norms,
        "quasipoly": quasi,
    });
    bundle.write(&spec.out, report)?;
    let summary = format!(
        "analyze {}: {:?} (winding {}, expected {}, {} nodes)",
        c.label,
        verdict,
        cert.winding,
        cert.expected,
        cert.plan.nodes.len()
    );
    if verdict == Verdict3::Inconclusive {
        return Err(CliError::Inconclusive(summary));
    }
    Ok(summary)
}

/// `(I + K G)^{-1} K`, the map from output disturbances to the control input.
fn s_times_k(g: &TransferExpr, k: &TransferExpr) -> pdectl::Result<TransferExpr> {
    synth::input_sensitivity(g, k)?.mul(k)
}

// ---------------------------------------------------------------- synthesis programs

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    ParabolicModelMatching,
    ParabolicMixedSensitivity,
    WaveFixedStructure,
    WaveScheduled,
}

impl Case {
    pub fn parse(s: &str) -> Result<Case, CliError> {
        Ok(match s {
            "parabolic-mm" => Case::ParabolicModelMatching,
            "parabolic-ms" => Case::ParabolicMixedSensitivity,
            "wave-fd" => Case::WaveFixedStructure,
            "wave-sched" => Case::WaveScheduled,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown case {s:?} (expected parabolic-mm, parabolic-ms, wave-fd, wave-sched)"
                )))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Case::ParabolicModelMatching => "parabolic-mm",
            Case::ParabolicMixedSensitivity => "parabolic-ms",
            Case::WaveFixedStructure => "wave-fd",
            Case::WaveScheduled => "wave-sched",
        }
    }

    fn is_wave(self) -> bool {
        matches!(self, Case::WaveFixedStructure | Case::WaveScheduled)
    }
}

/// One or more synthesis stages run in sequence, each starting where the last stopped.
pub struct Program {
    pub case: Case,
    pub stages: Vec<(&'static str, SynthesisProblem)>,
    pub structure: ControllerStructure,
    /// Fixture added to the tuned structure to form the controller.
    pub base: Option<&'static str>,
}

fn options(spec: &RunSpec) -> SynthOptions {
    let mut o = SynthOptions { theta: spec.theta, ..SynthOptions::default() };
    o.nyquist.seed = spec.seed;
    if let Some(m) = spec.max_iter {
        o.max_iter = m;
    }
    o
}

pub fn program(case: Case, spec: &RunSpec) -> Result<Program, CliError> {
    let plant_ok = match spec.plant {
        Plant::Parabolic(_) => !case.is_wave(),
        Plant::Wave(_) => case.is_wave(),
    };
    if !plant_ok {
        return Err(CliError::Config(format!("case {} does not apply to this plant", case.name())));
    }
    let opts = options(spec);
    match (&spec.plant, case) {
        (Plant::Parabolic(p), Case::ParabolicModelMatching | Case::ParabolicMixedSensitivity) => {
            let structure = spec.structure.clone().unwrap_or_else(ControllerStructure::k2);
            let g = p.tf()?;
            let gate = Gate::Direct { g: g.clone(), info: p.pole_info() };
            let problem = |name, objective| {
                (name, SynthesisProblem {
                    objective,
                    structure: structure.clone(),
                    gate: gate.clone(),
                    constraints: vec![],
                    options: opts.clone(),
                })
            };
            let stages = if case == Case::ParabolicModelMatching {
                let red = plants::reduced_parabolic(p, 50, 3)?;
                let k0 = plants::parabolic_fixture("parabolic_initial").expect("fixture");
                vec![problem("model_matching", Objective::Hinf(synth::model_matching_channel(&g, &red.g_red, &k0)?))]
            } else {
                let wu = plants::mixed_wu();
                vec![
                    problem("first_weights", Objective::Hinf(synth::mixed_sensitivity_channel(&g, &plants::mixed_we_first(), &wu))),
                    problem("final_weights", Objective::Hinf(synth::mixed_sensitivity_channel(&g, &plants::mixed_we_final(), &wu))),
                ]
            };
            Ok(Program { case, stages, structure, base: None })
        }
        (Plant::Wave(w), Case::WaveFixedStructure) => {
            let structure = spec.structure.clone().unwrap_or_else(ControllerStructure::wave_increment);
            let g0 = plants::wave_prestabilized(w.q, &plants::wave_adhoc_controller(w.q))?;
            let mut opts = opts;
            opts.hinf.cutoff = Some(WAVE_CUTOFF);
            let problem = SynthesisProblem {
                objective: Objective::Hinf(synth::mixed_sensitivity_channel(&g0, &plants::wave_we(), &plants::wave_wu())),
                structure: structure.clone(),
                gate: Gate::Prestabilized { g0 },
                constraints: vec![Constraint::DiskMargin { alpha: 0.5 }],
                options: opts,
            };
            Ok(Program { case, stages: vec![("mixed_sensitivity", problem)], structure, base: Some("wave_adhoc") })
        }
        _ => Err(CliError::Config(format!(
            "case {} has no synthesis program; its gains are evaluated by reproduce and simulate",
            case.name()
        ))),
    }
}

pub fn default_case(plant: &Plant) -> Case {
    match plant {
        Plant::Parabolic(_) => Case::ParabolicModelMatching,
        Plant::Wave(_) => Case::WaveFixedStructure,
    }
}

/// Starting parameters from `--controller`, or the case default.
pub fn initial_point(prog: &Program, spec: &RunSpec) -> Result<Vec<f64>, CliError> {
    let default = match prog.case {
        Case::WaveFixedStructure => "wave_small_gain",
        _ => "parabolic_initial",
    };
    let name = spec.controller.as_deref().unwrap_or(default);
    let dim = prog.structure.dim();
    if name == "zero" {
        return Ok(vec![0.0; dim]);
    }
    if name == "wave_small_gain" && prog.base == Some("wave_adhoc") {
        return Ok(plants::wave_small_gain_parameters());
    }
    let c = resolve_controller(name, &spec.plant)?;
    match c.param {
        Some((s, x)) if s == prog.structure && c.base.as_deref() == prog.base => Ok(x),
        _ => Err(CliError::Config(format!(
            "controller {name} has no parameters in the {} structure of case {}",
            serde_json::to_string(&prog.structure).expect("json"),
            prog.case.name()
        ))),
    }
}

pub struct ProgramRun {
    pub results: Vec<(&'static str, SynthesisResult)>,
    pub x: Vec<f64>,
    pub k: TransferExpr,
    pub certificate: NyquistCertificate,
}

pub fn run_program(prog: &Program, x0: &[f64], spec: &RunSpec) -> Result<ProgramRun, CliError> {
    let mut x = x0.to_vec();
    let mut results = vec![];
    for (name, p) in &prog.stages {
        let r = synth::optimize(p, &x).map_err(CliError::synthesis)?;
        x = r.x.clone();
        results.push((*name, r));
    }
    let inc = prog.structure.value(&x).map_err(CliError::synthesis)?;
    let inc_info = prog.structure.pole_info(&x).map_err(CliError::synthesis)?;
    let opts = nyquist_options(spec);
    let (k, certificate) = match &spec.plant {
        Plant::Parabolic(p) => {
            let g = p.tf()?;
            let cert = nyquist::check_stability(&g, &inc, &p.pole_info().merge(&inc_info), &opts)?;
            (inc, cert)
        }
        Plant::Wave(w) => {
            let k0 = plants::wave_adhoc_controller(w.q);
            let g0 = plants::wave_prestabilized(w.q, &k0)?;
            let k = k0.add(&inc)?;
            let cert = nyquist::check_stability_prestabilized(&g0, &k, &k0, &inc_info, &opts)?;
            (k, cert)
        }
    };
    Ok(ProgramRun { results, x, k, certificate })
}

pub fn history_jsonl(results: &[(&'static str, SynthesisResult)]) -> String {
    let mut out = String::new();
    for (stage, r) in results {
        for rec in &r.history {
            let mut v = serde_json::to_value(rec).expect("record");
            v["stage"] = json!(stage);
            out.push_str(&serde_json::to_string(&v).expect("json"));
            out.push('\n');
        }
    }
    out
}

pub fn stages_json(results: &[(&'static str, SynthesisResult)]) -> Value {
    results
        .iter()
        .map(|(name, r)| {
            json!({
                "stage": name,
                "initial_gamma": r.initial_gamma,
                "gamma": r.gamma,
                "merit": r.merit,
                "stop": r.stop,
                "iterations": r.history.len(),
                "accepted": r.history.iter().filter(|h| h.accepted).count(),
                "nodes": r.history.iter().map(|h| h.nodes).sum::<usize>(),
                "winding": r.winding,
            })
        })
        .collect()
}

pub fn controller_file(prog: &Program, x: &[f64]) -> String {
    let f = ControllerFile {
        schema: Some(crate::report::SCHEMA),
        structure: Some(prog.structure.clone()),
        x: Some(x.to_vec()),
        base: prog.base.map(String::from),
        expr: None,
        poles: None,
    };
    serde_json::to_string_pretty(&f).expect("json") + "\n"
}

pub fn synthesize(spec: &RunSpec) -> Result<String, CliError> {
    let case = match &spec.case {
        Some(c) => Case::parse(c)?,
        None => default_case(&spec.plant),
    };
    let prog = program(case, spec)?;
    let x0 = initial_point(&prog, spec)?;
    let run = run_program(&prog, &x0, spec)?;
    let mut bundle = Bundle::default();
    bundle.add("controller.json", controller_file(&prog, &run.x));
    bundle.add("history.jsonl", history_jsonl(&run.results));
    bundle.add("nyquist.csv", nyquist::nyquist_csv(&run.certificate.plan));
    let last = &run.results.last().expect("at least one stage").1;
    let report = json!({
        "command": "synthesize",
        "case": case.name(),
        "plant": plant_json(&spec.plant),
        "theta": spec.theta,
        "seed": spec.seed,
        "x0": x0,
        "x": run.x,
        "stages": stages_json(&run.results),
        "certificate": certificate_json(&run.certificate),
    });
    bundle.write(&spec.out, report)?;
    Ok(format!(
        "synthesize {}: γ {:.4} → {:.4}, final {:?}",
        case.name(),
        run.results[0].1.initial_gamma,
        last.gamma,
        run.certificate.verdict
    ))
}

// ---------------------------------------------------------------- simulation

pub fn simulate_with(plant: &Plant, k: Option<&TransferExpr>, cfg: &sim::SimConfig) -> Result<Trajectory, CliError> {
    let zero = |_: f64| 0.0;
    let drive = match k {
        Some(k) => Drive::Feedback(k),
        None => Drive::Open(&zero),
    };
    Ok(match plant {
        Plant::Parabolic(p) => sim::simulate_parabolic(p, drive, cfg)?,
        Plant::Wave(w) => sim::simulate_wave(w, drive, cfg)?,
    })
}

pub fn trajectory_json(tr: &Trajectory) -> Value {
    json!({
        "finite": tr.is_finite(),
        "steps": tr.times.len(),
        "initial_energy": tr.initial_energy(),
        "final_energy": tr.final_energy(),
        "energy_ratio": tr.final_energy() / tr.initial_energy(),
        "settle_time_1pct": tr.settle_time(0.01),
    })
}

pub fn simulate(spec: &RunSpec) -> Result<String, CliError> {
    let c = spec.controller.as_deref().map(|n| resolve_controller(n, &spec.plant)).transpose()?;
    let cfg = spec.sim_config();
    let tr = simulate_with(&spec.plant, c.as_ref().map(|c| &c.k), &cfg)?;
    let mut bundle = Bundle::default();
    bundle.add("trajectory.csv", tr.to_csv());
    if cfg.surface_every > 0 {
        bundle.add("surface.csv", tr.surface_csv());
    }
    let label = c.as_ref().map_or("open_loop".to_string(), |c| c.label.clone());
    let report = json!({
        "command": "simulate",
        "plant": plant_json(&spec.plant),
        "controller": label,
        "sim": cfg,
        "trajectory": trajectory_json(&tr),
    });
    bundle.write(&spec.out, report)?;
    Ok(format!(
        "simulate {label}: E(T)/E(0) = {:.3e} at T = {}",
        tr.final_energy() / tr.initial_energy(),
        cfg.t_end
    ))
}
