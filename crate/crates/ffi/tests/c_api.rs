use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use lorlab_ffi::*;

fn config(text: &str) -> *mut LorlabConfig {
    let src = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { lorlab_config_parse(src.as_ptr(), &mut cfg) }, LorlabStatus::Ok);
    cfg
}

#[test]
fn curvature_of_de_sitter() {
    let cfg = config("model.name = flrw\nmodel.n = 4\nmodel.a = e^t\n");
    let mut chart = ptr::null_mut();
    let mut ric = [0.0; 16];
    let mut scalar = 0.0;
    unsafe {
        assert_eq!(lorlab_chart_from_config(cfg, &mut chart), LorlabStatus::Ok);
        assert_eq!(lorlab_chart_dim(chart), 4);
        let s = lorlab_curvature(chart, [0.0, 0.1, 0.2, 0.3].as_ptr(), 4, ric.as_mut_ptr(), &mut scalar);
        assert_eq!(s, LorlabStatus::Ok);
        lorlab_chart_free(chart);
        lorlab_config_free(cfg);
    }
    assert!((ric[0] + 3.0).abs() < 1e-9);
    assert!((scalar.abs() - 12.0).abs() < 1e-9);
}

#[test]
fn legendre_round_trip_and_class() {
    let cfg = config("model.name = minkowski\nmodel.n = 3\n");
    let mut chart = ptr::null_mut();
    let x = [0.0; 3];
    let mut res = 1.0;
    let mut class = LorlabCausalClass::Zero;
    unsafe {
        lorlab_chart_from_config(cfg, &mut chart);
        assert_eq!(lorlab_legendre_residual(chart, x.as_ptr(), [1.5, 0.3, -0.4].as_ptr(), 3, 0.5, &mut res), LorlabStatus::Ok);
        assert_eq!(lorlab_classify(chart, x.as_ptr(), [-1.0, 0.0, 0.0].as_ptr(), 3, &mut class), LorlabStatus::Ok);
        assert_eq!(lorlab_legendre_residual(chart, x.as_ptr(), [0.1, 1.0, 0.0].as_ptr(), 3, 0.5, &mut res), LorlabStatus::Domain);
        lorlab_chart_free(chart);
        lorlab_config_free(cfg);
    }
    assert_eq!(class, LorlabCausalClass::PastCausal);
}

#[test]
fn run_experiment_reports_usage_errors() {
    let cfg = config("model.name = minkowski\n");
    let mut report = ptr::null_mut();
    let mut code = 0;
    let exp = CString::new("nonsense").unwrap();
    unsafe {
        assert_eq!(lorlab_run_experiment(cfg, exp.as_ptr(), &mut report, &mut code), LorlabStatus::Usage);
        assert_eq!(lorlab_run_experiment(cfg, ptr::null(), &mut report, &mut code), LorlabStatus::Usage);
        let exp = CString::new("energycond").unwrap();
        assert_eq!(lorlab_run_experiment(cfg, exp.as_ptr(), &mut report, &mut code), LorlabStatus::Ok);
        let json = CStr::from_ptr(report).to_str().unwrap().to_owned();
        lorlab_string_free(report);
        lorlab_config_free(cfg);
        assert!(json.contains("\"status\": \"pass\""));
    }
    assert_eq!(code, 0);
}

#[test]
fn c_program_links_against_header() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = target.join("liblorlab_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let bin = std::env::temp_dir().join(format!("lorlab_c_program_{}", std::process::id()));
    let status = Command::new(&cc)
        .arg(dir.join("tests/c_program.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C program failed to compile");
    let out = Command::new(&bin).output().unwrap();
    let _ = std::fs::remove_file(&bin);
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
