//! Run specification: command-line flags merged with an optional JSON config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pdectl::plants::{self, ControllerStructure, ParabolicPlant, WavePlant};
use pdectl::sim::SimConfig;
use pdectl::xfer::{RhpPoleInfo, TransferExpr};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Flags shared by every command. Values from `--config` take precedence.
#[derive(clap::Args, Debug, Default, Clone)]
pub struct Flags {
    /// Plant name: `parabolic` or `wave`.
    #[arg(long)]
    pub plant: Option<String>,
    /// Plant parameter override, e.g. `--param q=2.5` or `--param L=6.2832`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Fixture name, `zero`, or a controller JSON file.
    #[arg(long)]
    pub controller: Option<String>,
    /// Controller structure: `k2`, `wave-increment`, `adhoc`, `backstepping`, `scheduled`.
    #[arg(long)]
    pub structure: Option<String>,
    /// Accuracy ϑ of every norm estimate.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the random ray used for winding numbers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Synthesis or reproduction case.
    #[arg(long)]
    pub case: Option<String>,
    /// Iteration cap of the synthesis runs.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Simulation horizon in seconds.
    #[arg(long)]
    pub t_end: Option<f64>,
    /// JSON config file; its entries override the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: Option<String>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    sensors: Option<Vec<f64>>,
    controller: Option<String>,
    structure: Option<StructureRef>,
    theta: Option<f64>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    case: Option<String>,
    max_iter: Option<usize>,
    sim: Option<SimConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum StructureRef {
    Name(String),
    Full(ControllerStructure),
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Plant {
    Parabolic(ParabolicPlant),
    Wave(WavePlant),
}

impl Plant {
    pub fn outputs(&self) -> usize {
        match self {
            Plant::Parabolic(p) => p.sensors.len(),
            Plant::Wave(_) => 3,
        }
    }

    /// Anti-damping used to evaluate wave fixtures; the nominal value for the parabolic plant.
    pub fn q(&self) -> f64 {
        match self {
            Plant::Wave(w) => w.q,
            Plant::Parabolic(_) => plants::SCHED_Q0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSpec {
    pub plant: Plant,
    pub controller: Option<String>,
    pub structure: Option<ControllerStructure>,
    pub theta: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub case: Option<String>,
    pub max_iter: Option<usize>,
    pub sim: Option<SimConfig>,
    pub t_end: Option<f64>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_param(s: &str) -> Result<(String, f64), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| config_err(format!("--param expects KEY=VALUE, got {s:?}")))?;
    let v = v.trim().parse().map_err(|_| config_err(format!("--param {k}: {v:?} is not a number")))?;
    Ok((k.trim().to_string(), v))
}

fn resolve_plant(name: &str, params: &BTreeMap<String, f64>, sensors: Option<Vec<f64>>) -> Result<Plant, CliError> {
    let take = |keys: &[&str]| keys.iter().find_map(|k| params.get(*k).copied());
    let known: &[&str] = match name {
        "parabolic" => &["L", "length", "D", "delay", "c", "reaction"],
        "wave" => &["q"],
        _ => return Err(config_err(format!("unknown plant {name:?} (expected parabolic or wave)"))),
    };
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(config_err(format!("plant {name} has no parameter {k:?}")));
    }
    let plant = match name {
        "parabolic" => {
            let mut p = ParabolicPlant::default();
            if let Some(l) = take(&["L", "length"]) {
                p.length = l;
                p.sensors = ParabolicPlant::interior_sensors(l, p.sensors.len());
            }
            if let Some(d) = take(&["D", "delay"]) {
                p.delay = d;
            }
            if let Some(c) = take(&["c", "reaction"]) {
                p.reaction = c;
            }
            if let Some(s) = sensors {
                p.sensors = s;
            }
            p.validate()?;
            Plant::Parabolic(p)
        }
        _ => {
            if sensors.is_some() {
                return Err(config_err("sensor positions apply to the parabolic plant only"));
            }
            Plant::Wave(WavePlant::new(take(&["q"]).unwrap_or(plants::SCHED_Q0))?)
        }
    };
    Ok(plant)
}

fn resolve_structure(r: StructureRef, plant: &Plant) -> Result<ControllerStructure, CliError> {
    let q = plant.q();
    Ok(match r {
        StructureRef::Full(s) => s,
        StructureRef::Name(n) => match n.as_str() {
            "k2" => ControllerStructure::k2(),
            "wave-increment" => ControllerStructure::wave_increment(),
            "adhoc" => ControllerStructure::AdHoc { q },
            "backstepping" => ControllerStructure::Backstepping { q },
            "scheduled" => ControllerStructure::ScheduledQuadratic { q },
            _ => return Err(config_err(format!("unknown structure {n:?}"))),
        },
    })
}

impl RunSpec {
    pub fn resolve(flags: &Flags) -> Result<RunSpec, CliError> {
        let cfg = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
                serde_json::from_str::<ConfigFile>(&text)
                    .map_err(|e| config_err(format!("config {}: {e}", path.display())))?
            }
            None => ConfigFile::default(),
        };
        let mut params = BTreeMap::new();
        for p in &flags.params {
            let (k, v) = parse_param(p)?;
            params.insert(k, v);
        }
        params.extend(cfg.params);
        let plant_name = cfg.plant.or_else(|| flags.plant.clone()).unwrap_or_else(|| "parabolic".into());
        let plant = resolve_plant(&plant_name, &params, cfg.sensors)?;
        let structure = match cfg.structure.or_else(|| flags.structure.clone().map(StructureRef::Name)) {
            Some(r) => Some(resolve_structure(r, &plant)?),
            None => None,
        };
        let theta = cfg.theta.or(flags.theta).unwrap_or(1e-2);
        if !(theta > 0.0) {
            return Err(config_err(format!("theta must be positive, got {theta}")));
        }
        Ok(RunSpec {
            plant,
            controller: cfg.controller.or_else(|| flags.controller.clone()),
            structure,
            theta,
            out: cfg.out.or_else(|| flags.out.clone()).unwrap_or_else(|| PathBuf::from("out")),
            seed: cfg.seed.or(flags.seed).unwrap_or(pdectl::nyquist::NyquistOptions::default().seed),
            case: cfg.case.or_else(|| flags.case.clone()),
            max_iter: cfg.max_iter.or(flags.max_iter),
            sim: cfg.sim,
            t_end: flags.t_end,
        })
    }

    pub fn sim_config(&self) -> SimConfig {
        let mut c = self.sim.clone().unwrap_or_else(|| match self.plant {
            Plant::Parabolic(_) => SimConfig::parabolic_default(),
            Plant::Wave(_) => SimConfig::wave_default(),
        });
        if self.sim.is_none() {
            if let Some(t) = self.t_end {
                c.t_end = t;
            }
        }
        c
    }
}

/// Controller file layout. Either `structure` with `x` (optionally added to a `base` fixture)
/// or a serialized `expr` with its declared unstable poles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<ControllerStructure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<TransferExpr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<RhpPoleInfo>,
}

/// A resolved controller.
#[derive(Clone, Debug)]
pub struct Controller {
    pub label: String,
    pub k: TransferExpr,
    pub info: RhpPoleInfo,
    /// Structured parameters, when the controller came from a structure.
    pub param: Option<(ControllerStructure, Vec<f64>)>,
    pub base: Option<String>,
}

fn looks_like_path(s: &str) -> bool {
    s.ends_with(".json") || s.contains('/') || s.contains('\\') || Path::new(s).is_file()
}

fn fixture(name: &str, plant: &Plant) -> Result<(TransferExpr, RhpPoleInfo), CliError> {
    let q = plant.q();
    let all = plants::fixture_controllers(q);
    let k = all.get(name).cloned().ok_or_else(|| {
        let names: Vec<_> = all.keys().copied().collect();
        config_err(format!("unknown controller {name:?}; fixtures: zero, {}", names.join(", ")))
    })?;
    let info = plants::fixture_pole_info(name).unwrap_or_default();
    Ok((k, info))
}

fn check_shape(k: &TransferExpr, plant: &Plant) -> Result<(), CliError> {
    if k.rows() != 1 || k.cols() != plant.outputs() {
        return Err(config_err(format!(
            "controller is {}x{}, the plant needs 1x{}",
            k.rows(),
            k.cols(),
            plant.outputs()
        )));
    }
    Ok(())
}

pub fn resolve_controller(name: &str, plant: &Plant) -> Result<Controller, CliError> {
    let c = if name == "zero" {
        Controller {
            label: name.into(),
            k: TransferExpr::zeros(1, plant.outputs()),
            info: RhpPoleInfo::stable(),
            param: None,
            base: None,
        }
    } else if looks_like_path(name) {
        load_controller_file(Path::new(name), plant)?
    } else {
        let (k, info) = fixture(name, plant)?;
        let param = plants::parabolic_fixture_parameters(name).map(|x| (ControllerStructure::k2(), x));
        Controller { label: name.into(), k, info, param, base: None }
    };
    check_shape(&c.k, plant)?;
    Ok(c)
}

fn load_controller_file(path: &Path, plant: &Plant) -> Result<Controller, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read controller {}: {e}", path.display())))?;
    let f: ControllerFile =
        serde_json::from_str(&text).map_err(|e| config_err(format!("controller {}: {e}", path.display())))?;
    let label = path.display().to_string();
    let (mut k, mut info, param) = match (&f.structure, &f.x, &f.expr) {
        (Some(s), Some(x), _) => (s.value(x)?, s.pole_info(x)?, Some((s.clone(), x.clone()))),
        (None, None, Some(e)) => (e.clone(), f.poles.clone().unwrap_or_default(), None),
        _ => return Err(config_err(format!("controller {label}: give either structure and x, or expr"))),
    };
    if let Some(b) = &f.base {
        let (kb, ib) = fixture(b, plant)?;
        k = kb.add(&k)?;
        info = info.merge(&ib);
    }
    Ok(Controller { label, k, info, param, base: f.base })
}
