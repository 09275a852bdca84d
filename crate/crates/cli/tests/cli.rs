use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qlattice(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlattice"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn structured(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "structured"]);
    let out = qlattice(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_category(out: &Output) -> String {
    assert!(!out.status.success());
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["category"].as_str().unwrap().to_string()
}

#[test]
fn zz_pair_report() {
    let v = structured(&["zz", "--pair", "Q2,Q3"]);
    assert_eq!(v["command"], "zz");
    assert_eq!(v["schema_version"], 1);
    let z = v["result"]["zeta_perturbative"].as_f64().unwrap();
    assert!((z - 8.1).abs() < 0.05, "{z}");
    let table = String::from_utf8(qlattice(&["zz", "--pair", "Q2,Q3"]).stdout).unwrap();
    assert!(table.contains("Q2-Q3") && table.contains("8.129"), "{table}");
}

#[test]
fn stats_alpha_mean() {
    let v = structured(&["stats", "--column", "alpha"]);
    let mean = v["result"][0]["stats"]["mean"].as_f64().unwrap();
    assert!((mean.abs() - 196.4).abs() < 0.05, "{mean}");
    let t1 = structured(&["stats", "--column", "t1"]);
    assert!(!t1["result"][0]["discrepancies"].as_array().unwrap().is_empty());
}

#[test]
fn usage_errors_are_config_category() {
    let out = qlattice(&["zz", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_category(&out), "config");
    assert_eq!(error_category(&qlattice(&["rb", "--qubits", "Q1"])), "config");
    assert_eq!(error_category(&qlattice(&["stats", "--column", "nope"])), "config");
    assert_eq!(error_category(&qlattice(&["zz", "--pair", "Q2,Q99"])), "config");
    assert_eq!(
        error_category(&qlattice(&["tomography", "--state", "bell", "--qubits", "Q2,Q3", "--shots", "500"])),
        "config"
    );
}

#[test]
fn numerical_failures_carry_their_category() {
    let out = qlattice(&["calibrate-cz", "--rate", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_category(&out), "calibration");
}

#[test]
fn calibration_targets() {
    let full = structured(&["calibrate-cz", "--rate", "100"]);
    assert!((full["result"]["gate_time"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    let quarter = structured(&["calibrate-cz", "--rate", "38.27", "--quarter-phase"]);
    assert!((quarter["result"]["gate_time"].as_f64().unwrap() - 3.266).abs() < 0.002);
    assert_eq!(error_category(&qlattice(&["calibrate-cz", "--rate", "100", "--quarter-phase", "--target-phase", "1"])), "config");
}

fn run_to(dir: &Path, name: &str, args: &[&str]) -> Vec<u8> {
    let path = dir.join(name);
    let mut all = args.to_vec();
    let p = path.to_str().unwrap();
    all.extend(["--out", p]);
    let out = qlattice(&all);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    std::fs::read(&path).unwrap()
}

#[test]
fn replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 3] = [
        &["rb", "--qubits", "Q2,Q3", "--seed", "11", "--sequences", "4", "--lengths", "1,10,50,100", "--shots", "200"],
        &["tomography", "--state", "bell", "--qubits", "Q2,Q3", "--gate-time", "1", "--shots", "1000", "--seed", "5"],
        &["dynamics", "--protocol", "ramsey", "--qubit", "Q2", "--times", "0:20:11", "--jitter", "5", "--shots", "300", "--seed", "9"],
    ];
    for (i, args) in cases.iter().enumerate() {
        let a = run_to(dir.path(), &format!("a{i}.json"), args);
        let b = run_to(dir.path(), &format!("b{i}.json"), args);
        assert_eq!(a, b, "case {i}");
        let v: Value = serde_json::from_slice(&a).unwrap();
        assert!(v["seed"].is_u64() && v["config"]["args"].is_object(), "case {i}");
    }
    let mut other = cases[0].to_vec();
    other[4] = "12";
    assert_ne!(run_to(dir.path(), "a0.json", cases[0]), run_to(dir.path(), "c.json", &other));
}

#[test]
fn embedded_config_reproduces_result() {
    let v = structured(&["rb", "--qubits", "Q1", "--seed", "3", "--sequences", "3", "--lengths", "1,20,80", "--epc", "0.002"]);
    let c = &v["config"]["args"];
    let lengths: Vec<String> = c["lengths"].as_str().unwrap().split(',').map(String::from).collect();
    let seed = v["seed"].to_string();
    let epc = c["epc"].to_string();
    let seqs = c["sequences"].to_string();
    let again = structured(&[
        "rb", "--qubits", "Q1", "--seed", &seed, "--sequences", &seqs, "--lengths", &lengths.join(","), "--epc", &epc,
    ]);
    assert_eq!(v["result"], again["result"]);
}

#[test]
fn csv_and_plot_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t1.csv");
    let svg = dir.path().join("t1.svg");
    let out = qlattice(&[
        "dynamics", "--protocol", "t1", "--qubit", "Q1", "--times", "0:200:21",
        "--csv", csv.to_str().unwrap(), "--plot", svg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("delay [us],p1\n"));
    assert_eq!(text.lines().count(), 22);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<polyline"));
    let fit = structured(&["fit", "--input", csv.to_str().unwrap(), "--model", "exp", "--x", "delay", "--y", "p1"]);
    let tau = fit["result"]["values"][2].as_f64().unwrap();
    assert!((tau - 126.0).abs() < 1.0, "{tau}");
}

#[test]
fn device_files_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    std::fs::write(&good, qlattice::io::BUNDLED_DEVICE.replace("j = 0.631", "j = 1.262")).unwrap();
    let v = structured(&["zz", "--pair", "Q2,Q3", "--device", good.to_str().unwrap()]);
    let z = v["result"]["zeta_perturbative"].as_f64().unwrap();
    assert!((z / 8.129 - 4.0).abs() < 0.01, "{z}");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, qlattice::io::BUNDLED_DEVICE.replacen("t2e = 124.0", "t2e = \"x\"", 1)).unwrap();
    let out = qlattice(&["report", "--device", bad.to_str().unwrap()]);
    assert_eq!(error_category(&out), "config");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("qubits[0].t2e") && msg.contains("line"), "{msg}");
    assert_eq!(error_category(&qlattice(&["report", "--device", "/nonexistent.toml"])), "io");
}

#[test]
fn report_lists_straddling_exceptions() {
    let v = structured(&["report"]);
    let s = v["result"]["straddling"].as_object().unwrap();
    assert_eq!(s.len(), 24);
    let off: Vec<&String> = s.iter().filter(|(_, v)| !v.as_bool().unwrap()).map(|(k, _)| k).collect();
    assert_eq!(off, ["Q10-Q15", "Q15-Q16"]);
}
