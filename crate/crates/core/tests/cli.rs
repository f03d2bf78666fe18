use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use anosov_lab::lab::ExperimentRecord;
use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anosov-lab"));
    c.env_remove("ANOSOV_LAB_THREADS");
    c
}

fn minimal(dir: &Path, name: &str) -> Value {
    json!({
        "name": name,
        "map": {"matrix": [[2, 1], [1, 1]]},
        "grid": {"resolution": 64},
        "target": {"kind": "lebesgue"},
        "epsilons": [0.2],
        "n_values": {"start": 10, "end": 50, "step": 10},
        "quadrature_resolution": 32,
        "output_dir": dir.join("records"),
    })
}

fn write_config(dir: &Path, file: &str, config: &Value) -> PathBuf {
    let path = dir.join(file);
    std::fs::write(&path, serde_json::to_string_pretty(config).unwrap()).unwrap();
    path
}

fn run_config(dir: &Path, file: &str, config: &Value) -> Output {
    let path = write_config(dir, file, config);
    bin().arg("run").arg(path).output().unwrap()
}

fn record(dir: &Path, name: &str) -> ExperimentRecord {
    ExperimentRecord::load(&dir.join("records").join(format!("{name}.json"))).unwrap()
}

#[test]
fn minimal_run_writes_record_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let out = run_config(dir.path(), "minimal.json", &minimal(dir.path(), "minimal"));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rec = record(dir.path(), "minimal");
    let curve = rec.curves()[0];
    let last = curve.rows.last().unwrap();
    assert_eq!(last.n, 50);
    assert!(last.fraction() >= 0.9, "fraction {}", last.fraction());
    assert_eq!(rec.family.k, 33);
    assert!(rec.stage_errors.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("records/minimal.curves.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("epsilon,n,hits,samples,log_fraction")
    );
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn reruns_reproduce_hash_and_counts() {
    let dir = TempDir::new().unwrap();
    let config = minimal(dir.path(), "again");
    run_config(dir.path(), "a.json", &config);
    let first = record(dir.path(), "again");
    run_config(dir.path(), "a.json", &config);
    let second = record(dir.path(), "again");
    assert_eq!(first.config_hash, second.config_hash);
    assert_eq!(first.sweep, second.sweep);
    assert_eq!(first.unstable_integral, second.unstable_integral);
}

#[test]
fn thread_flag_overrides_environment() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "t.json", &minimal(dir.path(), "threads"));
    let out = bin()
        .env("ANOSOV_LAB_THREADS", "3")
        .args(["--threads", "1", "run"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let one = record(dir.path(), "threads");
    assert_eq!(one.environment.threads, 1);
    let out = bin()
        .env("ANOSOV_LAB_THREADS", "3")
        .arg("run")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let three = record(dir.path(), "threads");
    assert_eq!(three.environment.threads, 3);
    assert_eq!(one.sweep, three.sweep);
}

#[test]
fn identity_matrix_is_rejected() {
    let dir = TempDir::new().unwrap();
    let mut config = minimal(dir.path(), "bad");
    config["map"]["matrix"] = json!([[1, 0], [0, 1]]);
    let out = run_config(dir.path(), "bad.json", &config);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("invalid config") && err.contains("hyperbolicity"),
        "{err}"
    );
}

#[test]
fn failed_expectation_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let mut config = minimal(dir.path(), "expect");
    config["expectations"] = json!({"verdict": "negative_rate"});
    let out = run_config(dir.path(), "e.json", &config);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL verdict"));
    config["expectations"] = json!({"verdict": "consistent_with_zero", "min_final_fraction": 0.9});
    let out = run_config(dir.path(), "e.json", &config);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn entropy_stage_writes_sidecar() {
    let dir = TempDir::new().unwrap();
    let config = json!({
        "name": "fixed",
        "map": {"matrix": [[2, 1], [1, 1]]},
        "grid": {"resolution": 16},
        "target": {"kind": "dirac", "point": [0.0, 0.0]},
        "entropy": {"depths": [1, 2, 3, 4], "samples": 10000},
        "output_dir": dir.path().join("records"),
    });
    let out = run_config(dir.path(), "f.json", &config);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rec = record(dir.path(), "fixed");
    assert_eq!(rec.entropy.as_ref().unwrap().rate, 0.0);
    assert!(rec.sweep.is_none());
    let csv = std::fs::read_to_string(dir.path().join("records/fixed.entropy.csv")).unwrap();
    assert!(csv.starts_with("n,entropy,rate,cylinders,samples,adequate\n"));
}

#[test]
fn reports_in_every_format() {
    let dir = TempDir::new().unwrap();
    let mut config = minimal(dir.path(), "two");
    config["epsilons"] = json!([0.3, 0.2]);
    run_config(dir.path(), "two.json", &config);
    let rec = dir.path().join("records/two.json");

    let out_dir = dir.path().join("csv");
    let out = bin()
        .args(["report", "--format", "csv", "--out"])
        .arg(&out_dir)
        .arg(&rec)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 2);

    let plot_dir = dir.path().join("plot");
    let out = bin()
        .args(["report", "--format", "plotdata", "--out"])
        .arg(&plot_dir)
        .arg(&rec)
        .output()
        .unwrap();
    assert!(out.status.success());
    let curve = std::fs::read_to_string(plot_dir.join("two_eps0.3.plot.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("n,log_fraction"));
    let sweep = std::fs::read_to_string(plot_dir.join("two.sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next(), Some("epsilon,slope,stderr"));
}

#[test]
fn json_report_refuses_to_merge_across_families() {
    let dir = TempDir::new().unwrap();
    run_config(dir.path(), "a.json", &minimal(dir.path(), "k33"));
    let mut other = minimal(dir.path(), "k17");
    other["family"] = json!({"k": 17});
    run_config(dir.path(), "b.json", &other);
    let out_dir = dir.path().join("json");
    let out = bin()
        .args(["report", "--format", "json", "--out"])
        .arg(&out_dir)
        .arg(dir.path().join("records/k33.json"))
        .arg(dir.path().join("records/k17.json"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different family sizes"));
    assert!(out_dir.join("merged_k33.json").exists());
    assert!(out_dir.join("merged_k17.json").exists());
}

#[test]
fn missing_record_is_an_error() {
    let dir = TempDir::new().unwrap();
    let out = bin()
        .arg("report")
        .arg(dir.path().join("nope.json"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("record not found"));
}

#[test]
fn verify_map_reports_cones() {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), "cat.json", &minimal(dir.path(), "cat"));
    let out = bin().arg("verify-map").arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], json!(true));

    // steep mode along the stable direction tilts the unstable cone out of itself
    let mut steep = minimal(dir.path(), "steep");
    let c = 0.033 / (1.0f64 + 1.618_033_988_749_895f64.powi(2)).sqrt();
    steep["map"] = json!({
        "matrix": [[2, 1], [1, 1]],
        "amplitude": 0.4,
        "perturbation": [{"coefficient": [-c, c * 1.618_033_988_749_895], "frequency": [2, 1]}],
    });
    let path = write_config(dir.path(), "steep.json", &steep);
    let out = bin().arg("verify-map").arg(&path).output().unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn exports_partition_geometry() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("partition.json");
    let out = bin()
        .arg("export-partition")
        .arg("--out")
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["alphabet_size"], json!(5));
    assert_eq!(v["pieces"].as_array().unwrap().len(), 5);
}
