use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_laminate"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    assert_eq!(err["exit_code"], code);
    err
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn hinge_reports_surface_constants() {
    let v = stdout_json(&run(&["hinge", "--l", "0", "--w", "0", "--a", "0"]));
    assert_eq!(v["k"], 0.0073);
    assert_eq!(v["b"], 5.0855e-5);
    assert_eq!(v["source"], "comprehensive_model");
    assert_eq!(v["clamped"], false);

    let v = stdout_json(&run(&["hinge", "--model", "width", "--w", "0"]));
    assert_eq!(v["k"], 0.0003);
    assert_eq!(v["b"], 1.9812e-5);
    assert_eq!(v["source"], "width_model");
}

#[test]
fn hinge_flags_designs_outside_the_fitted_box() {
    let inside = stdout_json(&run(&["hinge", "--l", "1e-4", "--w", "0.06", "--a", "1e-3"]));
    assert_eq!(inside["warnings"].as_array().unwrap().len(), 0);
    let outside = stdout_json(&run(&["hinge", "--l", "0.01", "--w", "0.06", "--a", "1e-3"]));
    let warnings = outside["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert!(warnings[0].as_str().unwrap().starts_with("l = "));
}

#[test]
fn hinge_without_required_input_is_a_usage_error() {
    let err = error_json(&run(&["hinge", "--model", "length"]), 2);
    assert_eq!(err["error"], "ValueError");
}

fn simulate_into(dir: &Path, fixture_name: &str, extra: &[&str]) -> Value {
    let input = fixture(fixture_name);
    let mut args = vec!["simulate", path_str(&input), "--out-dir", path_str(dir)];
    args.extend_from_slice(extra);
    stdout_json(&run(&args))
}

#[test]
fn simulate_writes_listed_files_only() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let summary = simulate_into(&dir, "pendulum.yaml", &["--duration", "0.2"]);
    assert_eq!(summary["rows"], 2001);

    let csv = fs::read_to_string(dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2001);
    assert_eq!(csv.lines().next().unwrap(), "t,q_hinge,qd_hinge,constraint_err,ke,pe");

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    let listed: BTreeSet<String> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["file"].as_str().unwrap().to_string())
        .collect();
    let expected: BTreeSet<String> = ["trajectory.csv", "burn_in.csv", "angles.svg", "velocities.svg", "frames.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    assert_eq!(listed, expected);
    let on_disk: BTreeSet<String> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    assert_eq!(on_disk, expected);
    assert_eq!(manifest["config"]["duration"], 0.2);
    assert_eq!(manifest["command"], "simulate");

    let angles = fs::read_to_string(dir.join("angles.svg")).unwrap();
    assert!(angles.contains(">hinge<") && angles.contains("angle (rad)"));
    let velocities = fs::read_to_string(dir.join("velocities.svg")).unwrap();
    assert!(velocities.contains("angular velocity (rad/s)"));

    let frames: Value = serde_json::from_str(&fs::read_to_string(dir.join("frames.json")).unwrap()).unwrap();
    for body in frames["bodies"].as_array().unwrap() {
        let counts: BTreeSet<usize> = body["frames"]
            .as_array()
            .unwrap()
            .iter()
            .map(|f| f.as_array().unwrap().len())
            .collect();
        assert_eq!(counts.len(), 1, "vertex count varies for {}", body["id"]);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_into(&a, "fourbar.yaml", &["--duration", "0.05"]);
    simulate_into(&b, "fourbar.yaml", &["--duration", "0.05"]);
    for name in ["trajectory.csv", "burn_in.csv", "angles.svg", "velocities.svg", "frames.json", "manifest.json"] {
        assert!(fs::read(a.join(name)).unwrap() == fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn sixbar_run_reaches_the_stored_equilibrium() {
    let tmp = TempDir::new().unwrap();
    let summary = simulate_into(tmp.path(), "sixbar.yaml", &["--duration", "8", "--frame-rate", "5"]);
    let golden: Value =
        serde_json::from_str(&fs::read_to_string(fixture("sixbar_equilibrium.json")).unwrap()).unwrap();
    let angles = golden["angles"].as_object().unwrap();
    assert_eq!(angles.len(), 6);
    for (id, want) in angles {
        let got = summary["final_angles"][id].as_f64().unwrap();
        assert!((got - want.as_f64().unwrap()).abs() < 1e-3, "{id}: {got}");
    }
    let svg = fs::read_to_string(tmp.path().join("angles.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 6);
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("never");
    let missing = run(&["simulate", "/definitely/not/here.yaml", "--out-dir", path_str(&out)]);
    assert_eq!(error_json(&missing, 2)["error"], "IoError");

    let bad = tmp.path().join("bad.yaml");
    fs::write(&bad, "schema: 1\nbodies: [oops\n").unwrap();
    assert_eq!(error_json(&run(&["simulate", path_str(&bad)]), 2)["error"], "SchemaError");

    let fourbar = fixture("fourbar.yaml");
    let burn = run(&["simulate", path_str(&fourbar), "--burn-in-steps", "5", "--out-dir", path_str(&out)]);
    assert_eq!(error_json(&burn, 3)["error"], "BurnInFailedError");

    let triple = fixture("triple_pendulum.yaml");
    let blow = run(&["simulate", path_str(&triple), "--dt", "2", "--duration", "400", "--out-dir", path_str(&out)]);
    assert_eq!(error_json(&blow, 4)["error"], "NumericalBlowupError");
    assert!(!out.exists(), "failed runs must not write outputs");
}

#[test]
fn validate_reports_topology() {
    let v = stdout_json(&run(&["validate", path_str(&fixture("sixbar.yaml"))]));
    assert_eq!(v["valid"], true);
    assert_eq!(v["bodies"], 6);
    assert_eq!(v["cycles"], 1);
    assert!(v["cut_joint"].is_string());

    let tmp = TempDir::new().unwrap();
    let text = fs::read_to_string(fixture("pendulum.yaml")).unwrap();
    let broken = tmp.path().join("broken.yaml");
    fs::write(&broken, text.replace("child: arm", "child: b9")).unwrap();
    assert_eq!(error_json(&run(&["validate", path_str(&broken)]), 2)["error"], "ReferenceError");
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let rec = dir.join("rec.csv");
    let pendulum = fixture("pendulum.yaml");
    let mut args = vec!["synth-pendulum", path_str(&pendulum), "--output", path_str(&rec)];
    args.extend_from_slice(extra);
    stdout_json(&run(&args));
    rec
}

fn identify(rec: &Path, out: &Path) -> Output {
    let pendulum = fixture("pendulum.yaml");
    run(&[
        "identify",
        path_str(rec),
        "--mechanism",
        path_str(&pendulum),
        "--joint",
        "hinge",
        "--out-dir",
        path_str(out),
    ])
}

#[test]
fn identify_recovers_the_generating_hinge() {
    let tmp = TempDir::new().unwrap();
    let rec = synth(tmp.path(), &["--noise", "0.001", "--seed", "7"]);
    let out = tmp.path().join("id");
    let v = stdout_json(&identify(&rec, &out));
    let k = v["k"].as_f64().unwrap();
    let b = v["b"].as_f64().unwrap();
    assert!(((k - 0.05) / 0.05).abs() < 0.01, "k = {k}");
    assert!(((b - 2e-5) / 2e-5).abs() < 0.01, "b = {b}");
    assert!(out.join("identification.json").exists());
    let svg = fs::read_to_string(out.join("identify_fit.svg")).unwrap();
    assert!(svg.contains(">measured<") && svg.contains(">identified model<"));

    let by_hand = run(&[
        "identify",
        path_str(&rec),
        "--mass",
        &v["pendulum"]["mass"].to_string(),
        "--inertia-com",
        &v["pendulum"]["inertia_com"].to_string(),
        "--lever",
        &v["pendulum"]["lever"].to_string(),
        "--out-dir",
        path_str(&tmp.path().join("id2")),
    ]);
    assert_eq!(stdout_json(&by_hand)["k"], v["k"]);
}

#[test]
fn identify_bridges_a_short_dropout() {
    let tmp = TempDir::new().unwrap();
    let rec = synth(tmp.path(), &["--dropout", "500:3"]);
    let v = stdout_json(&identify(&rec, &tmp.path().join("id")));
    assert_eq!(v["interpolated_samples"], 3);
    assert_eq!(v["dropouts"]["arm"], 3);
    let warnings = v["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("interpolated")));
    let k = v["k"].as_f64().unwrap();
    assert!(((k - 0.05) / 0.05).abs() < 0.01, "k = {k}");
}

#[test]
fn identify_rejects_a_motionless_recording() {
    let tmp = TempDir::new().unwrap();
    let mut csv = String::from("t,frame_qw,frame_qx,frame_qy,frame_qz,arm_qw,arm_qx,arm_qy,arm_qz\n");
    let (c, s) = (0.1f64.cos(), 0.1f64.sin());
    for i in 0..720 {
        csv.push_str(&format!("{},1,0,0,0,{c},{s},0,0\n", i as f64 / 360.0));
    }
    let rec = tmp.path().join("still.csv");
    fs::write(&rec, csv).unwrap();
    let err = error_json(&identify(&rec, &tmp.path().join("id")), 3);
    assert_eq!(err["error"], "SpectrumError");
}

#[test]
fn fit_surface_recovers_table_coefficients() {
    let tmp = TempDir::new().unwrap();
    let k = |l: f64, w: f64, _a: f64| 0.0073 - 7.5305 * l + 0.4298 * w + 762.5397 * l * l - 1.4444 * w * w;
    let b = |l: f64, w: f64, a: f64| 5.0855e-5 - 0.227 * l - 0.0023 * w + 0.0129 * a + 2.0822 * l * l + 0.0408 * w * w - 0.8565 * a * a;
    let mut csv = String::from("l,w,a,k_meas,b_meas\n");
    for i in 0..4 {
        for j in 0..4 {
            for m in 0..3 {
                let (l, w, a) = (0.001 + 0.001 * i as f64, 0.045 + 0.01 * j as f64, 0.0005 + 0.001 * m as f64);
                csv.push_str(&format!("{l},{w},{a},{:e},{:e}\n", k(l, w, a), b(l, w, a)));
            }
        }
    }
    let table = tmp.path().join("table.csv");
    fs::write(&table, csv).unwrap();
    let v = stdout_json(&run(&["fit-surface", path_str(&table)]));
    assert_eq!(v["samples"], 48);
    let poly = &v["k"]["polynomial"];
    assert!((poly["intercept"].as_f64().unwrap() - 0.0073).abs() < 1e-9);
    assert!((poly["quadratic"][0].as_f64().unwrap() - 762.5397).abs() < 1e-6);
    assert!(v["b"]["mae"].as_f64().unwrap() < 1e-15);

    let one = stdout_json(&run(&["fit-surface", path_str(&table), "--variables", "w"]));
    assert_eq!(one["k"]["polynomial"]["linear"].as_array().unwrap().len(), 1);

    let missing = run(&["fit-surface", path_str(&table), "--variables", "x"]);
    assert_eq!(error_json(&missing, 2)["error"], "SchemaError");
}
