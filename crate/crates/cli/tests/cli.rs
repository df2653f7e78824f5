use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/example")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_climate-credit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Copies the bundled example into a scratch directory so tests can edit it.
fn scratch() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for f in ["portfolio.csv", "migration.csv", "scenario_stationary.json", "scenario_stressed.json"] {
        fs::copy(data().join(f), dir.path().join(f)).unwrap();
    }
    dir
}

fn simulate(dir: &Path, scenario: &str, out: &str, extra: &[&str]) -> serde_json::Value {
    let mut args = vec![
        "--portfolio".to_string(),
        dir.join("portfolio.csv").display().to_string(),
        "--scenario".to_string(),
        dir.join(scenario).display().to_string(),
        "--out".to_string(),
        dir.join(out).display().to_string(),
        "--paths".to_string(),
        "20000".to_string(),
        "--seed".to_string(),
        "5".to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&fs::read(dir.join(out).join("report.json")).unwrap()).unwrap()
}

fn stressed_total(report: &serde_json::Value, k: usize) -> f64 {
    report["risk"]["quantiles"][k]["total"].as_f64().unwrap()
}

#[test]
fn validate_only_prints_diagnostics_and_writes_nothing() {
    let dir = scratch();
    let out = dir.path().join("out");
    let o = run(&[
        "--portfolio",
        path(&dir.path().join("portfolio.csv")),
        "--scenario",
        path(&dir.path().join("scenario_stressed.json")),
        "--out",
        path(&out),
        "--validate-only",
    ]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("herfindahl: 0.0"), "{stdout}");
    assert!(!stdout.contains("warning"));
    assert!(!out.exists());
}

#[test]
fn outputs_are_byte_identical_across_runs_and_workers() {
    let dir = scratch();
    let extra = ["--alpha", "0.01", "--keep-trajectories", "--capital-cost", "0.1"];
    simulate(dir.path(), "scenario_stressed.json", "a", &[&extra[..], &["--workers", "1"]].concat());
    simulate(dir.path(), "scenario_stressed.json", "b", &[&extra[..], &["--workers", "8"]].concat());
    simulate(dir.path(), "scenario_stressed.json", "c", &extra);
    for f in ["report.json", "quantiles.csv", "allocation.csv", "histogram.csv", "manifest.json"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
        if f.ends_with(".csv") {
            assert!(a.starts_with(b"# config_digest="));
        }
    }
    let leftovers: Vec<_> = fs::read_dir(dir.path().join("a")).unwrap().collect();
    assert_eq!(leftovers.len(), 5);
}

#[test]
fn stationary_scenario_reduces_to_regulatory_model() {
    let dir = scratch();
    let proposed = simulate(dir.path(), "scenario_stationary.json", "p", &["--approach", "proposed"]);
    let t1 = simulate(dir.path(), "scenario_stationary.json", "t", &["--approach", "t1"]);
    let (a, b) = (stressed_total(&proposed, 0), stressed_total(&t1, 0));
    assert!((a - b).abs() <= 1e-9 * a, "{a} vs {b}");
    let (ea, eb) = (proposed["expected"]["total"].as_f64().unwrap(), t1["expected"]["total"].as_f64().unwrap());
    assert!((ea - eb).abs() <= 1e-9 * ea);
}

#[test]
fn stressed_scenario_proposed_exceeds_t1() {
    let dir = scratch();
    let extra = ["--alpha", "0.01", "--alpha", "0.001"];
    let proposed = simulate(dir.path(), "scenario_stressed.json", "p", &[&extra[..], &["--approach", "proposed"]].concat());
    let t1 = simulate(dir.path(), "scenario_stressed.json", "t", &[&extra[..], &["--approach", "t1"]].concat());
    for k in 0..2 {
        assert!(stressed_total(&proposed, k) >= stressed_total(&t1, k));
    }
}

fn expect_failure(dir: &Path, scenario: &str, code: i32, needles: &[&str]) {
    let o = run(&[
        "--portfolio",
        path(&dir.join("portfolio.csv")),
        "--scenario",
        path(&dir.join(scenario)),
        "--validate-only",
    ]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(code), "{stderr}");
    for n in needles {
        assert!(stderr.contains(n), "`{n}` missing from: {stderr}");
    }
}

fn edit(dir: &Path, file: &str, from: &str, to: &str) {
    let p = dir.join(file);
    let text = fs::read_to_string(&p).unwrap();
    assert!(text.contains(from));
    fs::write(&p, text.replacen(from, to, 1)).unwrap();
}

#[test]
fn bad_row_sum_is_a_validation_error() {
    let dir = scratch();
    edit(dir.path(), "migration.csv", "services,BB,0.004,0.06,0.86", "services,BB,0.004,0.06,0.83");
    expect_failure(dir.path(), "scenario_stressed.json", 4, &["group services", "row 3", "0.97"]);
}

#[test]
fn non_psd_correlation_is_a_validation_error() {
    let dir = scratch();
    let scenario = fs::read_to_string(dir.path().join("scenario_stressed.json")).unwrap().replace(
        r#"{ "block": { "rho": 0.2, "rho_o": 0.4, "regions": 1 } }"#,
        r#"{ "matrix": [[1, 0.9, 0.9], [0.9, 1, -0.9], [0.9, -0.9, 1]] }, "factors": ["economic", "transition", "physical-1"]"#,
    );
    fs::write(dir.path().join("bad.json"), scenario).unwrap();
    expect_failure(dir.path(), "bad.json", 4, &["smallest eigenvalue"]);
}

#[test]
fn error_classes_map_to_exit_codes() {
    let dir = scratch();
    fs::write(dir.path().join("broken.json"), "{ \"horizon\": ").unwrap();
    expect_failure(dir.path(), "broken.json", 3, &["parse error"]);
    expect_failure(dir.path(), "missing.json", 1, &["missing.json"]);

    edit(dir.path(), "scenario_stressed.json", "\"tau\": 0.1", "\"tau\": 0.95");
    expect_failure(dir.path(), "scenario_stressed.json", 5, &["no solution", "group energy, rating B"]);

    edit(dir.path(), "portfolio.csv", "rate\n", "rate,colour\n");
    expect_failure(dir.path(), "scenario_stationary.json", 3, &["unknown column `colour`"]);
}

#[test]
fn tag_partition_and_bad_flags() {
    let dir = scratch();
    let report = simulate(dir.path(), "scenario_stationary.json", "o", &["--subportfolio-key", "tag", "--alpha", "0.01"]);
    let labels = report["allocation"][0]["labels"].as_array().unwrap();
    assert_eq!(labels.len(), 4);
    let s: f64 = report["allocation"][0]["s_unexpected"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((s - 1.0).abs() < 1e-12);

    let o = run(&["--portfolio", "p.csv", "--scenario", "s.json", "--alpha", "2", "--validate-only"]);
    assert_ne!(o.status.code(), Some(0));
    let o = run(&["--portfolio", "p.csv"]);
    assert_eq!(o.status.code(), Some(2));
}
