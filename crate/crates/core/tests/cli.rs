use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn lorlab(args: &[&str]) -> (i32, Value, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lorlab")).args(args).output().expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    let report = serde_json::from_str(&stdout).unwrap_or(Value::Null);
    (out.status.code().unwrap_or(-1), report, String::from_utf8_lossy(&out.stderr).to_string())
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name).display().to_string()
}

#[test]
fn passing_run_writes_report_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let (code, report, _) = lorlab(&["bochner", "--config", &config("bochner_affine.cfg"), "--out", out.to_str().unwrap(), "--threads", "2"]);
    assert_eq!(code, 0);
    assert_eq!(report["status"], "pass");
    assert_eq!(report["schema"], "lorlab-report/1");
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(written["status"], "pass");
    assert!(out.join("timings.json").exists());
    for a in written["artifacts"].as_array().unwrap() {
        assert!(out.join(a.as_str().unwrap()).exists());
    }
}

#[test]
fn negative_control_exits_zero() {
    let (code, report, _) = lorlab(&["energycond", "--config", &config("energy_desitter.cfg")]);
    assert_eq!(code, 0);
    assert_eq!(report["status"], "expected-negative");
}

#[test]
fn failing_run_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ds.cfg");
    let text = std::fs::read_to_string(config("energy_desitter.cfg")).unwrap();
    let text: String = text.lines().filter(|l| !l.trim_start().starts_with("expect")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&cfg, text).unwrap();
    let (code, report, _) = lorlab(&["energycond", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert_eq!(report["status"], "fail");
}

#[test]
fn unexpected_pass_exits_one() {
    let (code, report, _) = lorlab(&["bochner", "--config", &config("bochner_affine.cfg"), "--expect-negative"]);
    assert_eq!(code, 1);
    assert_eq!(report["status"], "unexpected-pass");
}

#[test]
fn usage_errors_exit_two() {
    let (code, report, _) = lorlab(&["timesep", "--config", &config("bochner_affine.cfg")]);
    assert_eq!(code, 2);
    assert_eq!(report["error"]["kind"], "usage");

    let (code, _, _) = lorlab(&["timesep", "--config", "/nonexistent/x.cfg"]);
    assert_eq!(code, 2);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "metric = minkowski\nno equals sign here\n").unwrap();
    let (code, report, _) = lorlab(&["timesep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert_eq!(report["error"]["kind"], "config");

    let (code, _, _) = lorlab(&["bochner", "--config", &config("bochner_affine.cfg"), "--threads", "0"]);
    assert_eq!(code, 2);
}

#[test]
fn reports_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for t in ["1", "4"] {
        let out = dir.path().join(t);
        let (code, _, _) = lorlab(&["timesep", "--config", &config("timesep_flrw.cfg"), "--out", out.to_str().unwrap(), "--threads", t]);
        assert_eq!(code, 0);
        reports.push(std::fs::read(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}
