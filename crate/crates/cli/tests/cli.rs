use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn pdectl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdectl")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, PathBuf) {
    let out = dir.join("out");
    let mut full: Vec<&str> = args.to_vec();
    full.extend(["--out", out.to_str().unwrap()]);
    let o = pdectl(&full);
    let code = o.status.code().expect("exit code");
    if std::env::var_os("PDECTL_TEST_VERBOSE").is_some() {
        eprintln!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    }
    (code, out)
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn analyze_parabolic_initial_controller_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["analyze", "--controller", "parabolic_initial"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["verdict"], "Stable");
    assert_eq!(r["nyquist"]["winding"], 1);
    assert_eq!(r["theta"], 0.01);
    assert!(r["nyquist"]["nodes"].as_u64().unwrap() > 0);
    assert!(r["norms"]["input_sensitivity"]["gamma"].as_f64().unwrap() >= 1.0);
    assert_eq!(r["quasipoly"]["controller"]["rhp_poles"], 0);
    // every listed file exists and matches its recorded hash
    for (name, hash) in r["files"].as_object().unwrap() {
        let bytes = std::fs::read(out.join(name)).unwrap();
        assert_eq!(format!("{:x}", Sha256::digest(&bytes)), hash.as_str().unwrap(), "{name}");
    }
    let csv = std::fs::read_to_string(out.join("nyquist.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("omega,re,im"));
    let bode = std::fs::read_to_string(out.join("bode.csv")).unwrap();
    assert_eq!(bode.lines().next(), Some("omega,sigma_max"));
}

#[test]
fn analyze_without_feedback_is_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["analyze", "--controller", "zero"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["verdict"], "Unstable");
    assert_eq!(r["nyquist"]["winding"], 0);
    assert_eq!(r["nyquist"]["expected"], 1);
    assert!(r["norms"].as_object().unwrap().is_empty());
}

#[test]
fn analyze_wave_adhoc_uses_the_quasi_polynomial_check() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["analyze", "--plant", "wave", "--controller", "wave_adhoc"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["verdict"], "Stable");
    assert_eq!(r["quasipoly"]["prestabilization"]["base_stabilizes"], true);
    assert!(r["quasipoly"]["prestabilization"]["delay_margin"].as_f64().unwrap() > 1.0);
    assert!(r["norms"]["small_gain_margin"].as_f64().unwrap() > 0.0);
}

#[test]
fn printed_wave_controller_is_certified() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["analyze", "--plant", "wave", "--controller", "wave_fd"]);
    assert_eq!(code, 0);
    assert_eq!(report(&out)["verdict"], "Stable");
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["analyze", "--controller", "parabolic_matched", "--seed", "7", "--theta", "0.001"];
    let (ca, oa) = run_in(a.path(), &args);
    let (cb, ob) = run_in(b.path(), &args);
    assert_eq!((ca, cb), (0, 0));
    for f in ["report.json", "nyquist.csv", "bode.csv"] {
        assert_eq!(std::fs::read(oa.join(f)).unwrap(), std::fs::read(ob.join(f)).unwrap(), "{f}");
    }
    let r = report(&oa);
    assert_eq!(r["seed"], 7);
    assert_eq!(r["nyquist"]["ray_seed"], 7);
    assert_eq!(r["theta"], 0.001);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"plant": "wave", "params": {"q": 2.5}, "controller": "wave_adhoc"}"#);
    let (code, out) = run_in(dir.path(), &["analyze", "--plant", "parabolic", "--controller", "zero", "--config", &cfg]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["plant"]["kind"], "wave");
    assert_eq!(r["plant"]["q"], 2.5);
    assert_eq!(r["controller"], "wave_adhoc");
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(dir.path(), &["analyze", "--controller", "no_such_fixture"]).0, 1);
    assert_eq!(run_in(dir.path(), &["analyze", "--plant", "beam"]).0, 1);
    assert_eq!(run_in(dir.path(), &["analyze", "--theta", "-1"]).0, 1);
    assert_eq!(run_in(dir.path(), &["analyze", "--param", "q=2"]).0, 1);
    assert_eq!(run_in(dir.path(), &["reproduce", "--case", "beam-ms"]).0, 1);
    assert_eq!(run_in(dir.path(), &["synthesize", "--plant", "wave", "--case", "wave-sched"]).0, 1);
    let bad = write(dir.path(), "bad.json", r#"{"plant": "parabolic", "tolerance": 3}"#);
    assert_eq!(run_in(dir.path(), &["analyze", "--config", &bad]).0, 1);
    assert_eq!(pdectl(&["analyze", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(pdectl(&["--help"]).status.code(), Some(0));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn simulate_with_missing_controller_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let (code, out) = run_in(dir.path(), &["simulate", "--controller", missing.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(!out.exists());
}

#[test]
fn simulate_writes_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["simulate", "--controller", "parabolic_mixed_final", "--t-end", "2"]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,u,y1,y2,y3,y4,y5,E"));
    assert_eq!(csv.lines().count(), 202);
    let r = report(&out);
    assert_eq!(r["trajectory"]["finite"], true);
    assert_eq!(r["sim"]["t_end"], 2.0);
}

#[test]
fn open_loop_wave_simulation_grows() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["simulate", "--plant", "wave", "--t-end", "4"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["controller"], "open_loop");
    assert!(r["trajectory"]["energy_ratio"].as_f64().unwrap() > 10.0);
}

#[test]
fn synthesize_from_an_unstable_start_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["synthesize", "--controller", "zero"]);
    assert_eq!(code, 3);
    assert!(!out.exists());
}

#[test]
fn synthesized_controller_round_trips_through_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["synthesize", "--case", "parabolic-mm", "--max-iter", "4"]);
    assert_eq!(code, 0);
    let history = std::fs::read_to_string(out.join("history.jsonl")).unwrap();
    assert!(history.lines().count() >= 1);
    for line in history.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["stage"], "model_matching");
    }
    let r = report(&out);
    let stage = &r["stages"][0];
    assert!(stage["gamma"].as_f64().unwrap() <= stage["initial_gamma"].as_f64().unwrap());
    assert_eq!(r["certificate"]["verdict"], "Stable");

    let saved = out.join("controller.json");
    let again = tempfile::tempdir().unwrap();
    let (code, out2) = run_in(again.path(), &["analyze", "--controller", saved.to_str().unwrap()]);
    assert_eq!(code, 0);
    let a = report(&out2);
    assert_eq!(a["verdict"], "Stable");
    // same certificate up to evaluation-order rounding
    for key in ["verdict", "winding", "nodes", "cutoff", "tail"] {
        assert_eq!(a["nyquist"][key], r["certificate"][key], "{key}");
    }
    let (m1, m2) = (a["nyquist"]["min_abs"].as_f64().unwrap(), r["certificate"]["min_abs"].as_f64().unwrap());
    assert!((m1 - m2).abs() < 1e-12 * m2);
}

#[test]
fn wave_controller_file_with_a_base_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let inc = write(
        dir.path(),
        "inc.json",
        r#"{"base": "wave_adhoc", "expr": {"kind": "gain", "rows": 1, "cols": 3, "values": [0.0, 0.0, 0.5]}}"#,
    );
    let (code, out) = run_in(dir.path(), &["analyze", "--plant", "wave", "--controller", &inc]);
    assert_eq!(code, 0);
    assert_eq!(report(&out)["verdict"], "Stable");
}

#[test]
fn reproduce_wave_schedule_passes() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["reproduce", "--case", "wave-sched"]);
    assert_eq!(code, 0);
    let r = report(&out);
    assert_eq!(r["pass"], true);
    assert_eq!(r["checks"].as_array().unwrap().len(), 3);
    for f in ["trajectory.csv", "trajectory_q2.csv", "trajectory_q4.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn truncated_wave_program_fails_acceptance() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run_in(dir.path(), &["reproduce", "--case", "wave-fd", "--max-iter", "1"]);
    assert_eq!(code, 4);
    let r = report(&out);
    assert_eq!(r["pass"], false);
    let failed: Vec<_> =
        r["checks"].as_array().unwrap().iter().filter(|c| c["pass"] == false).map(|c| c["name"].clone()).collect();
    assert_eq!(failed, vec![Value::from("final mixed-sensitivity objective")]);
}

#[test]
fn uncertifiable_loop_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let inc = write(
        dir.path(),
        "inc.json",
        r#"{"base": "wave_adhoc", "expr": {"kind": "gain", "rows": 1, "cols": 3, "values": [0.0, 0.0, 2.0]}}"#,
    );
    let (code, _) = run_in(dir.path(), &["analyze", "--plant", "wave", "--controller", &inc]);
    assert_eq!(code, 2);
}
