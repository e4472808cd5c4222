use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use injx_core::report::{DiagnosticsReport, SweepReport};
use injx_core::store::{write_matrix, Matrix};

fn injx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_injx"))
        .args(args)
        .output()
        .unwrap()
}

fn synth(dir: &Path, name: &str, k: &str) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "synth", "--mode", "gaussian", "--n", "60", "--d", "6", "--layers", "3", "--k", k,
        "--vocab", "9", "--seed", "5",
    ];
    let out_s = out.display().to_string();
    args.extend_from_slice(&["--out", &out_s]);
    let o = injx(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let printed = String::from_utf8(o.stdout).unwrap();
    assert_eq!(printed.trim(), out.join("manifest.json").display().to_string());
    out.join("manifest.json")
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

const QUICK: [&str; 4] = ["--pairs", "300", "--bootstrap", "10"];

#[test]
fn layerwise_json_to_stdout() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    let mut args = vec!["layerwise", "--manifest"];
    let ms = s(&m);
    args.push(&ms);
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0));
    let rep: DiagnosticsReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep.layers.len(), 3);
    assert_eq!(rep.config.config.pairs, 300);
    assert!(rep.quantization.is_none());
}

#[test]
fn layerwise_csv_to_file() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    let out = tmp.path().join("report.csv");
    let (ms, os) = (s(&m), s(&out));
    let mut args = vec!["layerwise", "--manifest", &ms, "--format", "csv", "--out", &os, "--eps", "1e-3,1e-1"];
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    // 3 norms, 4 margin scales, 4 colip scales, min_margin, collisions, 2 epsilons
    assert_eq!(rows.len(), 3 * 15);
    assert!(text.contains("\"epsilons\":[0.001,0.1]"));
}

#[test]
fn quantize_sections() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    let ms = s(&m);
    let mut args = vec!["quantize", "--manifest", &ms, "--bits", "8,4,2"];
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0));
    let rep: DiagnosticsReport = serde_json::from_slice(&o.stdout).unwrap();
    let bits: Vec<u32> = rep.quantization.unwrap().iter().map(|q| q.bits).collect();
    assert_eq!(bits, [8, 4, 2]);
}

#[test]
fn sweeps() {
    let tmp = tempfile::tempdir().unwrap();
    let k4 = synth(tmp.path(), "k4", "4");
    let k6 = s(&synth(tmp.path(), "k6", "6"));
    let k4 = s(&k4);
    let a = format!("4={k4}");
    let b = format!("6={k6}");
    let mut args = vec!["seqlen", "--manifest", &b, "--manifest", &a];
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: SweepReport = serde_json::from_slice(&o.stdout).unwrap();
    let axes: Vec<&str> = rep.entries.iter().map(|e| e.axis.as_str()).collect();
    assert_eq!(axes, ["4", "6"]);

    let c1 = format!("100={k4}");
    let c2 = format!("200={k4}");
    let mut args = vec!["trajectory", "--checkpoint", &c1, "--checkpoint", &c2];
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0));
    let rep: SweepReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(rep.entries[0].layer, rep.entries[1].layer);

    let mut args = vec!["family", "--manifest", &k4, "--manifest", &k6, "--format", "csv"];
    args.extend_from_slice(&QUICK);
    let o = injx(&args);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn validation_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    let ms = s(&m);
    let missing = s(&tmp.path().join("missing.json"));
    let single = format!("4={ms}");
    let cases: Vec<Vec<&str>> = vec![
        vec!["layerwise", "--manifest", &missing],
        vec!["layerwise", "--manifest", &ms, "--format", "xml"],
        vec!["layerwise", "--manifest", &ms, "--q", "0"],
        vec!["layerwise"],
        vec!["seqlen", "--manifest", "nonsense"],
        vec!["seqlen", "--manifest", &single],
        vec!["quantize", "--manifest", &ms, "--bits", "0"],
        vec!["synth", "--mode", "gaussian", "--n", "100", "--d", "2", "--layers", "1", "--k", "2", "--vocab", "3", "--out", &missing],
        vec!["synth", "--mode", "nope", "--n", "10", "--d", "2", "--layers", "1", "--k", "2", "--vocab", "9", "--out", &missing],
    ];
    for args in cases {
        let o = injx(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn computation_error_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    write_matrix(
        tmp.path().join("run").join("layer_002.bin"),
        &Matrix::new(60, 6, vec![0.0; 360]).unwrap(),
    )
    .unwrap();
    let ms = s(&m);
    let o = injx(&["quantize", "--manifest", &ms, "--bits", "8", "--pairs", "300", "--bootstrap", "0"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("layer 2"), "{err}");
}

#[test]
fn thread_cap_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let m = synth(tmp.path(), "run", "4");
    let ms = s(&m);
    let o = Command::new(env!("CARGO_BIN_EXE_injx"))
        .args(["layerwise", "--manifest", &ms, "--pairs", "100", "--bootstrap", "5"])
        .env("INJX_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
