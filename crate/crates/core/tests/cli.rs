use std::path::Path;
use std::process::{Command, Output};

use emz::cli::parse_config_str;
use emz::galerkin::{Assembly, AssemblyParams, Observable};
use emz::model::Potential;
use serde_json::Value;

fn emz(args: &[&str], dir: &Path, threads: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_emz"));
    c.args(args).current_dir(dir).env_remove("EMZ_THREADS");
    if let Some(t) = threads {
        c.env("EMZ_THREADS", t);
    }
    c.output().unwrap()
}

fn write_cfg(dir: &Path, body: &str) -> String {
    let p = dir.join("cfg.json");
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const HARMONIC: &str = r#"{"potential": {"kind": "harmonic", "coefficients": [1.0]}, "basis": {"n_q": 20, "n_p": 20}}"#;

#[test]
fn spectrum_reports_the_harmonic_gap() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), HARMONIC);
    let o = emz(&["spectrum", "--config", &cfg, "--out", "out"], d.path(), Some("1"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let status: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(status["status"], "ok");
    let csv = std::fs::read_to_string(d.path().join("out/spectrum_K.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "gap").unwrap();
    let gap: f64 = lines.next().unwrap().split(',').nth(col).unwrap().parse().unwrap();
    assert!((gap - 0.5).abs() < 1e-6);
}

#[test]
fn kernel_vanishes_for_position_and_momentum() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        d.path(),
        r#"{"potential": {"kind": "harmonic", "coefficients": [1.0]}, "basis": {"n_q": 16, "n_p": 16}, "observables": ["p", "q"]}"#,
    );
    let o = emz(&["kernel", "--config", &cfg, "--out", "out"], d.path(), Some("1"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let k = read_json(&d.path().join("out/kernel.json"));
    assert!(k["kernel"]["max_abs"].as_f64().unwrap() <= 1e-12);
    assert!(d.path().join("out/kernel_galerkin.csv").exists());
}

#[test]
fn report_needs_a_spectrum() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), HARMONIC);
    let o = emz(&["report", "--config", &cfg, "--out", "out"], d.path(), Some("1"));
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["status"], "error");
    assert!(err["error"]["message"].as_str().unwrap().contains("missing dependency: spectrum"));
}

#[test]
fn unknown_keys_are_rejected() {
    let e = parse_config_str(r#"{"potential": {"kind": "harmonic", "coefficients": [1.0]}, "gamma_": 2.0}"#).unwrap_err();
    assert!(e.to_string().contains("unknown key"), "{e}");
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), r#"{"potential": {"kind": "harmonic", "coefficients": [1.0]}, "time": {"tmax": 2}}"#);
    let o = emz(&["check", "--config", &cfg, "--out", "out"], d.path(), Some("1"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key"));
}

#[test]
fn defaults_are_filled_and_written() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(d.path(), r#"{"potential": {"kind": "harmonic", "coefficients": [1.0]}}"#);
    let o = emz(&["check", "--config", &cfg, "--out", "out"], d.path(), Some("1"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&d.path().join("out/resolved_config.json"));
    assert_eq!(r["time"]["dt_out"], 0.01);
    assert_eq!(r["tolerances"]["fit_tail_fraction"], 0.5);
    assert!(r["basis"]["domain_halfwidth"].as_f64().unwrap() > 0.0);
    let again = parse_config_str(&r.to_string()).unwrap().resolve().unwrap();
    assert_eq!(serde_json::to_value(&again).unwrap(), r);
}

#[test]
fn named_momentum_is_a_unit_coefficient() {
    let asm = Assembly::build(&Potential::harmonic(1.0), &AssemblyParams::new(1.0, 1.0, 6, 6), &[Observable::Named("p".into())]).unwrap();
    let c = Observable::Named("p".into()).coefficients(&asm.basis).unwrap();
    let k = asm.basis.index(0, 1);
    for (i, v) in c.iter().enumerate() {
        assert_eq!(*v, if i == k { 1.0 } else { 0.0 });
    }
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v = Vec::new();
    for e in walk(dir) {
        let ext = e.extension().and_then(|x| x.to_str()).unwrap_or("");
        if ext == "csv" || ext == "bin" {
            v.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
        }
    }
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn pipeline_is_deterministic_across_thread_counts() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        d.path(),
        r#"{"potential": {"kind": "quartic"}, "basis": {"n_q": 12, "n_p": 12}, "observables": ["p"],
            "time": {"t_max": 4.0}, "ensemble": {"n_steps": 20000, "n_replicas": 6, "seed": 3},
            "certificate": {"entropy_samples": 3, "n_delta": 40, "n_eps": 40}}"#,
    );
    for (out, threads) in [("a", "1"), ("b", "3")] {
        for cmd in ["check", "spectrum", "kernel", "simulate", "extract", "certify", "report"] {
            let o = emz(&[cmd, "--config", &cfg, "--out", out], d.path(), Some(threads));
            assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    let a = artifacts(&d.path().join("a"));
    let b = artifacts(&d.path().join("b"));
    assert!(a.iter().any(|(n, _)| n == "trajectory.bin"));
    assert_eq!(a.len(), b.len());
    for ((na, xa), (nb, xb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(xa == xb, "{na} differs");
    }
    let report = read_json(&d.path().join("a/report.json"));
    assert!(report["missing"].as_array().unwrap().is_empty(), "{report}");
}
