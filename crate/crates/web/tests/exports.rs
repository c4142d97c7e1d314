use pdectl_web::{delay_margin, fixtures, nyquist_check, nyquist_value, simulate, simulate_value};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn fixtures_are_split_by_plant() {
    let wave = parse(fixtures("wave"));
    let par = parse(fixtures("parabolic"));
    assert!(wave.as_array().unwrap().iter().all(|n| n.as_str().unwrap().starts_with("wave")));
    assert!(par.as_array().unwrap().iter().any(|n| n == "parabolic_initial"));
    assert!(parse(fixtures("beam"))["error"].is_string());
}

#[test]
fn nyquist_of_the_initial_controller_is_stable() {
    let v = nyquist_value("parabolic", "parabolic_initial", 3.0).unwrap();
    assert_eq!(v["verdict"], "Stable");
    assert_eq!(v["winding"], 1);
    let n = v["re"].as_array().unwrap().len();
    assert!(n > 2 && n <= 401);
    assert_eq!(v["im"].as_array().unwrap().len(), n);
}

#[test]
fn wave_fixture_certifies_through_the_base_loop() {
    assert_eq!(nyquist_value("wave", "wave_fd", 3.0).unwrap()["verdict"], "Stable");
    assert!(parse(nyquist_check("wave", "nope", 3.0))["error"].is_string());
}

#[test]
fn closed_loop_energy_decays_and_open_loop_grows() {
    let closed = simulate_value("wave", "wave_adhoc", 3.0, 20.0).unwrap();
    assert!(closed["ratio"].as_f64().unwrap() < 0.05);
    let open = simulate_value("wave", "", 3.0, 4.0).unwrap();
    assert!(open["ratio"].as_f64().unwrap() > 10.0);
    assert!(parse(simulate("wave", "", 3.0, -1.0))["error"].is_string());
}

#[test]
fn delay_margin_exceeds_one_for_the_base_controller() {
    let h = parse(delay_margin(1.0, 1.0, 1.0 / 64.0))["h"].as_f64().unwrap();
    assert!(h > 1.0);
}
