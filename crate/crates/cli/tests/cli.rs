use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_dpgs"));
    c.env_remove("DPGS_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dpgs")
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

const SMALL_PLAN: [&str; 6] = ["--epsilon", "1", "--delta", "0.1", "--alpha", "0.2"];

#[test]
fn plan_rejects_epsilon_out_of_range() {
    let out = run(&["plan", "--epsilon", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("(0, 1]"), "{err}");
}

#[test]
fn plan_sizes_add_up() {
    let out = run(&["plan", "--dim", "3", "--epsilon", "0.5", "--delta", "1e-6"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["format_version"], 1);
    let p = &v["plan"];
    let n = p["n"].as_u64().unwrap();
    assert_eq!(n, p["n1"].as_u64().unwrap() + 2 * p["n2"].as_u64().unwrap());
    let table = String::from_utf8_lossy(&out.stderr);
    for key in ["lambda0", "n1", "n2", "k", "M"] {
        assert!(table.contains(key));
    }
}

#[test]
fn plan_is_deterministic() {
    let a = run(&["plan", "--log-base", "two", "--mode", "strict"]);
    let b = run(&["plan", "--log-base", "two", "--mode", "strict"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn gen_shape_and_header() {
    let out = run(&["gen", "--n", "3", "--dim", "2", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "x1,x2");
    for l in &lines[1..] {
        for f in l.split(',') {
            // d.dddddddddddddddde±x: 17 significant digits
            let mantissa = f.split('e').next().unwrap().trim_start_matches('-');
            assert_eq!(mantissa.replace('.', "").len(), 17, "{f}");
            f.parse::<f64>().unwrap();
        }
    }
}

#[test]
fn gen_is_seeded() {
    let a = run(&["gen", "--n", "50", "--dim", "2", "--seed", "9"]);
    let b = run(&["gen", "--n", "50", "--dim", "2", "--seed", "9"]);
    let c = run(&["gen", "--n", "50", "--dim", "2", "--seed", "10"]);
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let e = bin()
        .args(["gen", "--n", "50", "--dim", "2"])
        .env("DPGS_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(a.stdout, e.stdout);
}

#[test]
fn gen_variance_matches() {
    let out = run(&["gen", "--n", "100000", "--dim", "1", "--seed", "4"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let xs: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var - 1.0).abs() < 4.0 * (2.0 / n).sqrt(), "var {var}");
}

#[test]
fn gen_rejects_indefinite_covariance() {
    let out = run(&["gen", "--n", "3", "--dim", "2", "--cov", "1,2,2,1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("positive definite"));
}

fn plan_n() -> usize {
    let mut args = vec!["plan"];
    args.extend(SMALL_PLAN);
    json(&run(&args))["plan"]["n"].as_u64().unwrap() as usize
}

#[test]
fn sample_round_trip_and_hygiene() {
    let n = plan_n().to_string();
    let data = tmp("sample_in.csv");
    let out = run(&["gen", "--n", &n, "--mean", "1000000", "--cov", "10000", "--seed", "2", "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let mut args = vec!["sample", "--in", data.to_str().unwrap(), "--seed", "3"];
    args.extend(SMALL_PLAN);
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let v = json(&a);
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["outcome"], "ok");
    let z = v["z"][0].as_f64().unwrap();
    assert!((z - 1e6).abs() < 1e3, "z = {z}");
    assert!(v["trace"]["score2"].is_u64());
    // No data row appears in any output.
    let csv = std::fs::read_to_string(&data).unwrap();
    let row = csv.lines().nth(1).unwrap();
    assert!(!String::from_utf8_lossy(&a.stdout).contains(row));
    assert!(!String::from_utf8_lossy(&a.stderr).contains(row));
}

#[test]
fn sample_rejects_wrong_row_count() {
    let n = (plan_n() - 1).to_string();
    let data = tmp("short.csv");
    run(&["gen", "--n", &n, "--out", data.to_str().unwrap()]);
    let mut args = vec!["sample", "--in", data.to_str().unwrap()];
    args.extend(SMALL_PLAN);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sample_fail_is_a_normal_outcome() {
    // Constant data: the paired differences vanish, every point is
    // dropped, and the score saturates past the gate's fail threshold.
    let n = plan_n();
    let data = tmp("constant.csv");
    let mut text = String::from("x1\n");
    for _ in 0..n {
        text.push_str("5.0\n");
    }
    std::fs::write(&data, text).unwrap();
    let mut args = vec!["sample", "--in", data.to_str().unwrap()];
    args.extend(SMALL_PLAN);
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["outcome"], "fail");
    assert!(v.get("z").is_none());
}

#[test]
fn mean_outputs_estimate() {
    let data = tmp("mean_in.csv");
    run(&["gen", "--n", "3000", "--dim", "2", "--mean", "-50,20", "--seed", "5", "--out", data.to_str().unwrap()]);
    let out = run(&["mean", "--in", data.to_str().unwrap(), "--epsilon", "1", "--delta", "0.01", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["format_version"], 1);
    if v["outcome"] == "ok" {
        let z: Vec<f64> = v["z"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((z[0] + 50.0).abs() < 10.0 && (z[1] - 20.0).abs() < 10.0, "{z:?}");
    }
}

#[test]
fn audit_score_sensitivity_passes() {
    let out_path = tmp("score.jsonl");
    let summary = tmp("score.csv");
    let out = run(&[
        "audit", "--check", "score_sensitivity", "--trials", "500", "--seed", "7",
        "--out", out_path.to_str().unwrap(), "--summary", summary.to_str().unwrap(), "--threads", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["check_id"], "score_sensitivity");
    assert_eq!(v["failures"], 0);
    assert_eq!(v["trials"], 500);
    let s = std::fs::read_to_string(&summary).unwrap();
    assert!(s.starts_with("format_version,check_id,verdict"));
    assert!(s.contains("score_sensitivity,pass,500,0"));
}

#[test]
fn audit_failure_exits_one() {
    // The matrix-bound check fails on vertex spectra.
    let out = run(&["audit", "--check", "matrix_bounds", "--trials", "30", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["verdict"], "fail");
}

#[test]
fn audit_rejects_unknown_check() {
    let out = run(&["audit", "--check", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["audit", "--mode", "standard", "--check", "ptr_extremes"]);
    assert_eq!(out.status.code(), Some(2));
}
