use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn kinelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinelab"))
        .args(args)
        .env("KINELAB_THREADS", "2")
        .output()
        .expect("spawn kinelab")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

const SMALL_RUN: &str = r#"
[run]
system = "euler3d"
initial = "taylor-green-3d"
n = 16
dt = 0.025
t_end = 0.25
candidate_t = 0.5
snapshot_every = 5

[tracers]
count = 6
seed = 3

[[regions]]
name = "core"
center = [1.5, 1.5, 1.5]
radius = 1.0
"#;

#[test]
fn identity_suite_passes() {
    let out = kinelab(&["check-identities", "--count", "2000", "--seed", "5", "--dim", "2"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).ends_with("PASS\n"));
    let out = kinelab(&["check-identities", "--count", "500", "--json"]);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], Value::Bool(true));
    assert_eq!(v["dim"], 3);
}

#[test]
fn single_degenerate_sample_is_skipped() {
    let out = kinelab(&["check-identities", "--count", "1", "--degenerate-every", "1"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("skipped       1"), "{text}");
    assert!(text.contains("|v| = 0"), "{text}");
}

#[test]
fn bad_arguments_are_config_errors() {
    assert_eq!(code(&kinelab(&["check-identities", "--dim", "4"])), 2);
    assert_eq!(code(&kinelab(&["check-identities", "--count", "0"])), 2);
    assert_eq!(code(&kinelab(&["run", "/nonexistent/run.toml"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[run]\nsystem = \"euler3d\"\ninitial = \"vortex-ring\"\nn = 8\ndt = 0.1\nt_end = 0.2\n");
    assert_eq!(code(&kinelab(&["run", &bad])), 2);
    let typo = write(dir.path(), "typo.toml", &SMALL_RUN.replace("t_end", "tend"));
    assert_eq!(code(&kinelab(&["run", &typo])), 2);
    let region = write(
        dir.path(),
        "region.toml",
        &SMALL_RUN.replace("radius = 1.0", "radius = 0.01"),
    );
    let out = kinelab(&["run", &region, "--output", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no grid points"));
}

#[test]
fn bad_thread_count_is_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_kinelab"))
        .args(["check-identities", "--count", "10"])
        .env("KINELAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn gronwall_with_zero_beta_echoes_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "g.toml",
        "[problem]\nvariant = \"double\"\na = 0.0\nb = 2.0\nsamples = 21\nalpha = \"linear:1.0,0.5\"\nbeta = \"0\"\n",
    );
    let out = kinelab(&["gronwall", &spec, "--json"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let bound = v["problem"]["bound"]["bound"].as_array().unwrap();
    let oracle = v["problem"]["oracle"].as_array().unwrap();
    for (k, (b, o)) in bound.iter().zip(oracle).enumerate() {
        let alpha = 1.0 + 0.5 * (2.0 * k as f64 / 20.0);
        assert!((b.as_f64().unwrap() - alpha).abs() < 1e-14);
        assert!((o.as_f64().unwrap() - alpha).abs() < 1e-12);
    }
}

#[test]
fn gronwall_equality_case_and_batch() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "g.toml",
        "[problem]\na = 0.0\nb = 1.0\nalpha = \"1\"\nbeta = \"1.5\"\nsamples = 101\nlevels = 4\n\n[batch]\ncount = 100\nseed = 9\nvariant = \"double\"\n",
    );
    let out = kinelab(&["gronwall", &spec]);
    let text = stdout(&out);
    assert_eq!(code(&out), 0, "{text}");
    assert!(text.contains("batch: 100/100 dominated"), "{text}");
}

#[test]
fn gronwall_hypothesis_violation_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "g.toml",
        "[problem]\na = 0.0\nb = 1.0\nalpha = \"linear:1.0,-0.5\"\nbeta = \"1\"\n",
    );
    assert_eq!(code(&kinelab(&["gronwall", &spec])), 2);
}

#[test]
fn run_writes_artifacts_and_report_renders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL_RUN);
    let out_dir = dir.path().join("out");
    let out = kinelab(&["run", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert!(matches!(code(&out), 0 | 1), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "report.json", "series.csv", "tracers/tracer_0005.csv", "snapshots/velocity_s000010.json"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let r = report(&out_dir);
    assert_eq!(code(&out) == 0, r["verification_passed"] == Value::Bool(true));
    let criteria = r["criteria"].as_array().unwrap();
    // two regions, three functionals each
    assert_eq!(criteria.len(), 6);
    assert!(criteria.iter().all(|c| c["finite"] == Value::Bool(true)));
    for res in r["tracers"]["residuals"].as_array().unwrap() {
        assert!(res["max_abs"].as_f64().unwrap().is_finite());
    }

    let table = kinelab(&["report", out_dir.join("report.json").to_str().unwrap()]);
    assert_eq!(code(&table), 0);
    assert!(stdout(&table).contains("align-minus"));
    let csv = kinelab(&["report", out_dir.join("report.json").to_str().unwrap(), "--format", "csv"]);
    let text = stdout(&csv);
    assert!(text.starts_with("section,name,region,value,status\n"));
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 5), "{text}");
    assert_eq!(code(&kinelab(&["report", cfg.as_str()])), 2);
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.toml", SMALL_RUN);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    kinelab(&["run", &cfg, "--output", a.to_str().unwrap()]);
    let out = Command::new(env!("CARGO_BIN_EXE_kinelab"))
        .args(["run", &cfg, "--output", b.to_str().unwrap()])
        .env("KINELAB_THREADS", "1")
        .output()
        .unwrap();
    assert!(out.status.code().is_some());
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(files.len() > 10);
    for f in files {
        let rel = f["path"].as_str().unwrap();
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    assert_eq!(
        std::fs::read(a.join("manifest.json")).unwrap(),
        std::fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn steady_taylor_green_stays_put() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tg.toml",
        "[run]\nsystem = \"boussinesq2d\"\ninitial = \"taylor-green-2d\"\nn = 64\ndt = 0.01\nt_end = 1.0\ncandidate_t = 2.0\nsnapshot_every = 0\n",
    );
    let out_dir = dir.path().join("tg");
    let out = kinelab(&["run", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.code().is_some());
    let r = report(&out_dir);
    assert!(r["solver"]["max_velocity_deviation"].as_f64().unwrap() <= 1e-6);
    assert!(r["tracers"].is_null());
}

#[test]
fn taylor_green_3d_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "tg3.toml",
        "[run]\nsystem = \"euler3d\"\ninitial = \"taylor-green-3d\"\nn = 32\ndt = 0.05\nt_end = 0.5\ncandidate_t = 1.0\nsnapshot_every = 0\n\n[tracers]\ncount = 4\n",
    );
    let out_dir = dir.path().join("tg3");
    let out = kinelab(&["run", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.code().is_some());
    let r = report(&out_dir);
    assert_eq!(r["solver"]["under_resolved"], Value::Bool(false));
    let residuals = r["tracers"]["residuals"].as_array().unwrap();
    assert!(!residuals.is_empty());
    assert!(residuals.iter().all(|s| s["max_abs"].as_f64().unwrap().is_finite()));
}
