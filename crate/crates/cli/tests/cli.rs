use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use calabi_lab::output::{read_summary, read_trace};
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calabi-lab"))
}

fn write(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn torus_flow(initial: &str, t_end: f64) -> Value {
    json!({
        "surface": {"topology": "torus", "nx": 16, "ny": 16, "lx": 1.0, "ly": 1.0},
        "initial": initial,
        "flow": {"t_end": t_end, "dt_init": 1e-6, "dt_max": 1e-4, "eps_step": 1e-8,
                 "area_drift_tol": 1e-4, "sample_interval": t_end / 10.0}
    })
}

fn run_flow(dir: &Path, name: &str, config: &Value) -> (Output, PathBuf) {
    let cfg = write(dir, &format!("{name}.json"), config);
    let out = dir.join(name);
    let o = exec(&["flow", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    (o, out)
}

#[test]
fn stationary_flow_passes_with_flat_trace() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_flow(dir.path(), "flat", &torus_flow("flat", 1e-3));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let trace = read_trace(&out.join("trace.csv")).unwrap();
    assert_eq!(trace.samples.len(), 11);
    assert!(trace.samples.iter().all(|s| s.calabi == 0.0 && s.liouville == 0.0));
    assert_eq!(trace.preamble["format_version"], "1");
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.exit_code, 0);
    assert_eq!(summary.config_hash, trace.preamble["config_hash"]);
    let svg = fs::read_to_string(out.join("energies.svg")).unwrap();
    assert!(svg.contains(&format!("config_hash={}", summary.config_hash)));
}

#[test]
fn malformed_config_exits_2_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{\n  \"surface\": {\"topology\": \"torus\", \"nx\": 8, \"ny\": 8, \"lx\": 1, \"ly\": 1},\n  \"initial\": \"flat\",\n  \"flwo\": {}\n}").unwrap();
    let o = exec(&["flow", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json:4:") && err.contains("flwo"), "{err}");

    let missing = exec(&["flow", "--config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(code(&missing), 2);
    let wrong_topology = write(dir.path(), "w.json", &torus_flow("round", 1e-3));
    assert_eq!(
        code(&exec(&[
            "flow",
            "--quiet",
            "--config",
            wrong_topology.to_str().unwrap(),
            "--out",
            dir.path().join("w").to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn report_healthy_injected_and_missing() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_flow(dir.path(), "mode", &torus_flow("torus_mode 1 0.01", 1e-3));
    assert_eq!(code(&o), 0);
    let healthy = exec(&["report", out.to_str().unwrap()]);
    assert_eq!(code(&healthy), 0);
    let text = String::from_utf8_lossy(&healthy.stdout);
    assert!(text.contains("[PASS] calabi") && !text.contains("[FAIL]"), "{text}");
    assert!(out.join("report.txt").is_file() && out.join("report.svg").is_file());

    // raise Ca on the last row
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines: Vec<String> = csv.lines().map(String::from).collect();
    let last = lines.last_mut().unwrap();
    let mut cells: Vec<String> = last.split(',').map(String::from).collect();
    cells[2] = "1.0".into();
    *last = cells.join(",");
    fs::write(out.join("trace.csv"), lines.join("\n") + "\n").unwrap();
    let red = exec(&["report", "--quiet", out.to_str().unwrap()]);
    assert_eq!(code(&red), 1);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("[FAIL] calabi"));

    assert_eq!(code(&exec(&["report", dir.path().join("empty").to_str().unwrap()])), 2);
}

#[test]
fn partial_run_keeps_outputs_and_report_marks_failure() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = torus_flow("torus_mode 1 0.01", 1e-3);
    config["flow"]["checkpoint_interval"] = json!(5e-4);
    let (o, out) = run_flow(dir.path(), "probe", &config);
    assert_eq!(code(&o), 0);
    let mut names: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".bin"))
        .collect();
    names.sort();

    // block the first checkpoint payload with a directory
    let failing = dir.path().join("failing");
    fs::create_dir_all(failing.join("checkpoints").join(&names[0])).unwrap();
    let cfg = write(dir.path(), "failing.json", &config);
    let o = exec(&["flow", "--quiet", "--config", cfg.to_str().unwrap(), "--out", failing.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let summary = read_summary(&failing.join("summary.json")).unwrap();
    let failure = summary.failure.expect("failure recorded");
    let trace = read_trace(&failing.join("trace.csv")).unwrap();
    assert!((failure.t - 5e-4).abs() < 1e-15);
    assert_eq!(summary.last_good_t, Some(trace.samples.last().unwrap().t));

    let report = exec(&["report", failing.to_str().unwrap()]);
    assert_eq!(code(&report), 3);
    let text = String::from_utf8_lossy(&report.stdout);
    assert!(text.contains("RUN FAILED") && text.contains("last good sample"), "{text}");
}

#[test]
fn seed_changes_random_runs_and_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "r.json", &torus_flow("random 0.02", 2e-4));
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = exec(&[
            "flow",
            "--quiet",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0);
        read_trace(&out.join("trace.csv")).unwrap()
    };
    let (a, b, c) = (run("1", "a"), run("1", "b"), run("2", "c"));
    assert_eq!(a.preamble["seed"], "1");
    assert_eq!(a.samples[0].calabi, b.samples[0].calabi);
    assert_ne!(a.samples[0].calabi, c.samples[0].calabi);
    assert_ne!(a.preamble["config_hash"], c.preamble["config_hash"]);
}

#[test]
fn sweep_runs_in_disjoint_directories() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = torus_flow("random 0.02", 2e-4);
    config["sweep"] = json!({"seeds": [3, 4], "initials": ["random 0.02", "torus_mode 2 0.005"], "threads": 2});
    let cfg = write(dir.path(), "s.json", &config);
    let out = dir.path().join("sweep");
    let o = exec(&["sweep", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.details["runs"].as_array().unwrap().len(), 4);
    for i in 0..4 {
        assert!(out.join(format!("run_{i:03}/trace.csv")).is_file());
    }

    // each sweep member matches a standalone run of its own config
    let member = out.join("run_001/config.json");
    let solo = dir.path().join("solo");
    assert_eq!(
        code(&exec(&["flow", "--quiet", "--config", member.to_str().unwrap(), "--out", solo.to_str().unwrap()])),
        0
    );
    assert_eq!(fs::read(solo.join("trace.csv")).unwrap(), fs::read(out.join("run_001/trace.csv")).unwrap());
}

#[test]
fn geodesic_command() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, geodesic: Value, surface: Value| -> Value {
        let cfg = write(
            dir.path(),
            &format!("{name}.json"),
            &json!({"surface": surface, "initial": "round", "geodesic": geodesic}),
        );
        let out = dir.path().join(name);
        let o = exec(&["geodesic", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("path/index.json").is_file());
        read_summary(&out.join("summary.json")).unwrap().details
    };
    let sphere = json!({"topology": "sphere", "level": 3});
    let same = run("same", json!({"to": "round", "segments": 8}), sphere.clone());
    assert_eq!(same["distance"].as_f64().unwrap(), 0.0);
    let shift = run("shift", json!({"to": "round", "to_offset": 2.0, "segments": 8}), sphere);
    assert!((shift["distance"].as_f64().unwrap() - 7.090).abs() < 1e-3);

    let torus = json!({"topology": "torus", "nx": 16, "ny": 16, "lx": 1.0, "ly": 1.0});
    let pair = |n: usize| {
        run(
            &format!("pair{n}"),
            json!({"from": "torus_mode 1 0.02", "to": "torus_mode 2 0.01", "segments": n}),
            torus.clone(),
        )["metric_distance"]
            .as_f64()
            .unwrap()
    };
    let (d8, d16) = (pair(8), pair(16));
    assert!(d8 > 0.0 && ((d16 - d8) / d16).abs() < 5e-3, "{d8} {d16}");
}

#[test]
fn spectrum_and_scan_commands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        &json!({
            "surface": {"topology": "sphere", "level": 3},
            "initial": "round",
            "spectrum": {"k": 4, "dump_eigenfields": true},
            "scan": {"eps": 0.5}
        }),
    );
    let out = dir.path().join("spec");
    assert_eq!(
        code(&exec(&["spectrum", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])),
        0
    );
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert_eq!(summary.band.unwrap().dim, 3);
    assert_eq!(summary.kw_residual, Some(0.0));
    assert!(out.join("eigenfields/eigen_003.json").is_file());

    let out = dir.path().join("scan");
    assert_eq!(code(&exec(&["scan", "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])), 0);
    let summary = read_summary(&out.join("summary.json")).unwrap();
    assert!(summary.concentration_max.unwrap() < 0.9 * 16.0 * std::f64::consts::PI.powi(2));
    assert!(summary.details["flagged"].as_array().unwrap().is_empty());
}
