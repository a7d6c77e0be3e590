use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qscn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qscn")).args(args).output().expect("binary runs")
}

fn bundled() -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/secoqc.json");
    p.to_str().unwrap().to_string()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// The bundled scenario with one JSON edit applied.
fn variant(dir: &Path, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let mut doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(bundled()).unwrap()).unwrap();
    edit(&mut doc);
    let path = dir.join("variant.json");
    fs::write(&path, serde_json::to_string_pretty(&doc).unwrap()).unwrap();
    path
}

#[test]
fn validate_prints_preflight_rates() {
    let out = qscn(&["validate", &bundled()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("e1") && stdout.contains("231312.2"), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.contains("r_k =")).count(), 8);
}

#[test]
fn validate_rejects_decoy_violation_and_negative_rate() {
    let dir = tempfile::tempdir().unwrap();
    let path = variant(dir.path(), |d| d["device"]["nu"] = serde_json::json!(0.5));
    let out = qscn(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("nu < mu"), "{}", text(&out.stderr));

    let path = variant(dir.path(), |d| {
        d["traffic"]["lambda"] = serde_json::json!(-25.0);
        d["traffic"].as_object_mut().unwrap().remove("pair_rate");
    });
    let out = qscn(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn syntax_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    fs::write(&path, "{\n  \"name\": \"x\",\n  \"nodes\": [,]\n}\n").unwrap();
    let out = qscn(&["validate", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("line 3"), "{}", text(&out.stderr));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(qscn(&["run", &bundled(), "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(qscn(&["run", &bundled(), "--demand", "fast"]).status.code(), Some(1));
    assert_eq!(qscn(&["--help"]).status.code(), Some(0));
}

#[test]
fn run_then_analyze_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = qscn(&[
        "run",
        &bundled(),
        "--demand",
        "100kbps",
        "--seed",
        "7",
        "--horizon",
        "90s",
        "-o",
        run_dir.to_str().unwrap(),
        "--first-break-link",
        "e1",
        "--min-operation-time",
        "40s",
        "--max-operation-time",
        "57s",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    for f in ["run.json", "trace.csv", "pools.csv", "routing.csv", "summary.json", "indicators.csv", "analytic.json"] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }

    let again = dir.path().join("again");
    let out = qscn(&["analyze", run_dir.to_str().unwrap(), "-o", again.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(fs::read(run_dir.join("summary.json")).unwrap(), fs::read(again.join("summary.json")).unwrap());
    assert_eq!(fs::read(run_dir.join("indicators.csv")).unwrap(), fs::read(again.join("indicators.csv")).unwrap());

    let printed = qscn(&["analyze", run_dir.to_str().unwrap()]);
    assert_eq!(printed.stdout, fs::read(run_dir.join("summary.json")).unwrap());

    let summary: serde_json::Value = serde_json::from_slice(&printed.stdout).unwrap();
    let t_o = summary["its"]["operation_time"].as_f64().unwrap();
    assert!((40.0..=57.0).contains(&t_o));
}

#[test]
fn violated_expectation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let out = qscn(&["run", &bundled(), "--demand", "100kbps", "--horizon", "60s", "-o", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = qscn(&["analyze", run_dir.to_str().unwrap(), "--expect-stable"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("expectation violated"));
    let out = qscn(&["analyze", run_dir.to_str().unwrap(), "--min-rcost", "3kbps", "--max-rcost", "5kbps"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert_eq!(qscn(&["analyze", dir.path().join("missing").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn rate_table_is_monotone() {
    let out = qscn(&["rate-table", "--from", "0", "--to", "200", "--step", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = text(&out.stdout);
    let mut lines = stdout.lines();
    assert!(lines.next().unwrap().starts_with("length_km,r_k"));
    let rates: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(rates.len(), 41);
    assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(*rates.last().unwrap(), 0.0);
    assert_eq!(qscn(&["rate-table", "--step", "0"]).status.code(), Some(1));
}

#[test]
fn capability_analytic_only() {
    let out = qscn(&["capability", &bundled(), "--analytic-only"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let c = report["analytic"].as_f64().unwrap();
    assert!((c - 23_081.2).abs() < 1.0, "{c}");
    assert_eq!(report["binding_link"], "e1");
    assert!(report["empirical"].is_null());
}

#[test]
fn sweep_writes_table_and_spread() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let out = qscn(&[
        "sweep",
        &bundled(),
        "--seeds",
        "1..3",
        "--demands",
        "10kbps,100kbps",
        "--horizon",
        "70s",
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = fs::read_to_string(out_dir.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    let spread: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(spread[0]["broke"], 0);
    assert_eq!(spread[1]["broke"], 3);
}
