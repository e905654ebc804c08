use std::process::{Command, Output};

use serde_json::Value;

fn carnot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carnot")).args(args).output().expect("binary runs")
}

fn envelope(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn payload(mut v: Value) -> Value {
    v.as_object_mut().unwrap().remove("timing");
    v
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(carnot(&[]).status.code(), Some(2));
    assert_eq!(carnot(&["group", "check", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(carnot(&["group", "check", "--group", "q7"]).status.code(), Some(2));
    assert_eq!(carnot(&["cantor", "dim", "--depth", "9"]).status.code(), Some(2));
    assert_eq!(carnot(&["--help"]).status.code(), Some(0));
}

#[test]
fn cantor_dimension() {
    let out = carnot(&["cantor", "dim", "--epsilon", "2", "--depth", "6"]);
    assert_eq!(out.status.code(), Some(0));
    let v = envelope(&out);
    let slope = v["report"]["fit"]["dimension"].as_f64().unwrap();
    assert!((slope - 2.0).abs() <= 0.15, "{slope}");
    assert_eq!(v["pass"], Value::Bool(true));
}

#[test]
fn identity_decomposes_into_one_piece() {
    let args = ["decompose", "run", "--map", "identity", "--seed", "7", "--depth", "2", "--samples", "800", "--cube-samples", "256"];
    let out = carnot(&args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = envelope(&out);
    assert_eq!(v["report"]["pieces"].as_array().unwrap().len(), 1);
    let again = envelope(&carnot(&args));
    assert_eq!(payload(v), payload(again));
}

#[test]
fn worker_count_does_not_change_results() {
    let base = ["counterex", "curve", "--depth", "6", "--samples", "20000", "--pairs", "20000", "--seed", "3"];
    let one: Vec<&str> = base.iter().copied().chain(["--workers", "1"]).collect();
    let four: Vec<&str> = base.iter().copied().chain(["--workers", "4"]).collect();
    let (a, b) = (carnot(&one), carnot(&four));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(payload(envelope(&a)), payload(envelope(&b)));
}

#[test]
fn artifacts_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = carnot(&["pansu", "probe", "--map", "dilation:3", "--point", "0.5,-1,2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v = envelope(&out);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("pansu-probe.json")).unwrap()).unwrap();
    assert_eq!(payload(written), payload(v.clone()));
    let csv = std::fs::read_to_string(dir.path().join("pansu-probe-residuals.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(header["command"], "pansu probe");
    assert_eq!(lines.next(), Some("step,residual"));
    assert_eq!(v["artifacts"][0], "pansu-probe-residuals.csv");
}

#[test]
fn failing_check_exits_1() {
    // Three samples cannot resolve the Haar norm to three sigma.
    let out = carnot(&["wavelets", "profile", "--samples", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let v = envelope(&out);
    assert_eq!(v["pass"], Value::Bool(false));
    assert!(v["checks"].as_array().unwrap().iter().any(|c| c["pass"] == Value::Bool(false)));
}
