use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lgrowth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lgrowth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run_with(dir: &Path, sub: &str, config: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = write_config(dir, &format!("{sub}.json"), config);
    let out = dir.join(format!("out-{sub}"));
    let mut args = vec![sub, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"];
    args.extend_from_slice(extra);
    (lgrowth(&args), out)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn flow_inflates_circle_at_unit_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_with(
        dir.path(),
        "flow",
        r#"{"scenario": {"kind": "circle", "nodes": 256},
            "kernel": {"family": "wrapped_gaussian", "bandwidth": 0.3, "normalization": "unit_speed"},
            "flow": {"dt": 1e-3, "t_max": 1.0}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&out.join("summary.json"));
    let slope = summary["radius_fit"][0]["slope"].as_f64().unwrap();
    assert!((slope - 1.0).abs() <= 1e-3, "{slope}");
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "flow");
    assert_eq!(manifest["config"]["scenario"]["nodes"], 256);
    assert_eq!(manifest["config"]["collar"]["chi"], "quintic");
    assert!(manifest["versions"]["lgrowth-core"].is_string());
    assert!(manifest["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,component,node,x,y"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0.0000000000000000e0");
    let mantissa = row[3].split('e').next().unwrap().replace(['.', '-'], "");
    assert_eq!(mantissa.len(), 17, "{}", row[3]);
}

#[test]
fn validate_sde_passes_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_with(
        dir.path(),
        "validate-sde",
        r#"{"scenario": {"kind": "circle"},
            "sde_checks": {"law_paths": 20000, "dirichlet_paths": 2000, "trace_samples": 5000, "ks_tol": 0.03}}"#,
        &["--seed", "11"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("report.json"));
    assert_eq!(report["pass"], true);
    assert_eq!(report["criteria"].as_array().unwrap().len(), 3);
    assert_eq!(json(&out.join("manifest.json"))["config"]["seed"], 11);
}

#[test]
fn failed_criterion_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_with(
        dir.path(),
        "trace-invariance",
        r#"{"scenario": {"kind": "circle", "nodes": 64}, "trace": {"samples": 200, "ks_tol": 1e-9}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(json(&out.join("report.json"))["pass"], false);
}

#[test]
fn trace_invariance_on_deformed_map() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_with(
        dir.path(),
        "trace-invariance",
        r#"{"scenario": {"kind": "circle", "nodes": 64},
            "trace": {"samples": 4000, "ks_tol": 0.03, "stretch": [1.3, 0.9], "wobble": 0.1}}"#,
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("report.json"));
    let (ks, uni) = (
        r["trace"]["ks_surface"].as_f64().unwrap(),
        r["trace"]["ks_uniform"].as_f64().unwrap(),
    );
    assert!(ks < uni, "{ks} vs {uni}");
    let rows = fs::read_to_string(out.join("endpoints.csv")).unwrap().lines().count();
    assert_eq!(rows, 4001);
}

#[test]
fn usage_and_config_errors_exit_1() {
    let o = lgrowth(&["inflate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(lgrowth(&["--help"]).status.code(), Some(0));
    assert_eq!(lgrowth(&["flow"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let (o, _) = run_with(dir.path(), "grow", r#"{"scenario": {"kind": "circle"}, "micro": {"epsilon": -0.1}}"#, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("micro.epsilon"));
    let (o, _) = run_with(dir.path(), "flow", r#"{"scenario": {"kind": "circle"}, "flow": {"step": 1}}"#, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("flow.step"));
    let o = lgrowth(&["flow", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

const SMALL_GROW: &str = r#"{"scenario": {"kind": "circle", "nodes": 48},
    "micro": {"epsilon_grid": [0.05, 0.025], "delta": "sqrt", "seeds": [1, 2, 3], "t_max": 0.1,
              "compensator_samples": 4, "sde": {"dt": 0.016}}}"#;

#[test]
fn grow_outputs_are_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "grow.json", SMALL_GROW);
    let mut outputs = Vec::new();
    for threads in ["1", "1", "3"] {
        let out = dir.path().join(format!("out-{}", outputs.len()));
        let o = lgrowth(&[
            "grow",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--threads",
            threads,
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for file in ["snapshots.csv", "jumps.csv", "martingale.csv"] {
        let a = fs::read(outputs[0].join(file)).unwrap();
        assert!(a.len() > 100, "{file}");
        for o in &outputs[1..] {
            assert_eq!(a, fs::read(o.join(file)).unwrap(), "{file}");
        }
    }
    let m = json(&outputs[0].join("manifest.json"));
    let d = m["materialized"]["delta_by_epsilon"].as_array().unwrap();
    assert_eq!(d.len(), 2);
    assert!((d[1]["delta"].as_f64().unwrap() - 0.025f64.sqrt()).abs() < 1e-15);
    assert_eq!(m["materialized"]["seeds"], serde_json::json!([1, 2, 3]));
    assert_eq!(m["materialized"]["threads"], 1);
}

#[test]
fn compare_reports_cells_and_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = run_with(
        dir.path(),
        "compare",
        r#"{"scenario": {"kind": "circle", "nodes": 48},
            "micro": {"epsilon_grid": [0.05, 0.025], "seeds": [0, 1], "t_max": 0.1,
                      "compensator_samples": 4, "sde": {"dt": 0.016}},
            "lab": {"chi_profiles": ["quintic", "septic"], "chi_epsilon": 0.05}}"#,
        &[],
    );
    let code = o.status.code();
    assert!(code == Some(0) || code == Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("report.json"));
    assert_eq!(report["criteria"].as_array().unwrap().len(), 3);
    assert_eq!(report["pass"] == true, code == Some(0));
    let cells = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 2 * 2);
    assert!(out.join("chi_final.csv").exists());
    for cell in report["experiment"]["cells"].as_array().unwrap() {
        assert_eq!(cell["c0_gap"]["n"], 2);
        assert!(cell["c0_gap"]["std_error"].is_number());
    }
}
