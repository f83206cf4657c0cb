use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn models() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn cesmc(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cesmc"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("CESMC_WORKERS")
        .output()
        .unwrap()
}

fn model(name: &str) -> String {
    models().join(name).to_str().unwrap().to_string()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const FAILURE: &str = "X ((! init) U failure)";

#[test]
fn exact_reports_probability_and_residual() {
    let dir = TempDir::new().unwrap();
    let out = cesmc(dir.path(), &["exact", "--model", &model("tiny-repair-1x2.gcm"), "--property", FAILURE]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("result.json"));
    let p = r["probability"].as_f64().unwrap();
    assert!((p - 1.0 / 11.0).abs() < 1e-10);
    assert!(r["residual"].as_f64().unwrap() < 1e-9);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn mc_without_n_uses_the_chernoff_size() {
    let dir = TempDir::new().unwrap();
    let out = cesmc(
        dir.path(),
        &["mc", "--model", &model("tiny-t1.gcm"), "--property", "F x = 2", "--epsilon", "0.01", "--delta", "0.05"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("result.json"));
    assert_eq!(r["estimate"]["n"].as_u64(), Some(18445));
    let g = r["estimate"]["gamma_hat"].as_f64().unwrap();
    let v = r["estimate"]["sample_variance"].as_f64().unwrap();
    assert_eq!(v, g * (1.0 - g) * 18445.0 / 18444.0);
}

#[test]
fn ce_writes_one_row_per_iteration() {
    let dir = TempDir::new().unwrap();
    let out = cesmc(
        dir.path(),
        &[
            "ce",
            "--model",
            &model("small-repair-2x2.gcm"),
            "--property",
            FAILURE,
            "--nj",
            "500",
            "--iterations",
            "7",
            "--all-iterations",
            "--n-is",
            "1000",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "iteration,lambda_1,lambda_2,lambda_3,lambda_4,hits,undecided,gamma_hat,sample_variance"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7);
    for (i, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[0], (i + 1).to_string());
        let sum: f64 = cells[1..5].iter().map(|c| c.parse::<f64>().unwrap()).sum();
        assert!((sum - 4.0).abs() < 1e-12);
    }
    let r = json(&dir.path().join("result.json"));
    assert!(r["estimate"]["gamma_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn rerun_reproduces_outputs_byte_for_byte() {
    let first = TempDir::new().unwrap();
    let out = cesmc(
        first.path(),
        &["ce", "--model", &model("small-repair-2x2.gcm"), "--property", FAILURE, "--nj", "300", "--n-is", "500"],
    );
    assert!(out.status.success());
    let second = TempDir::new().unwrap();
    let manifest = first.path().join("manifest.json");
    let out = cesmc(second.path(), &["rerun", manifest.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["convergence.csv", "result.json", "manifest.json"] {
        assert_eq!(fs::read(first.path().join(f)).unwrap(), fs::read(second.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let mut outputs = Vec::new();
    for workers in ["1", "4", "8"] {
        let dir = TempDir::new().unwrap();
        let out = cesmc(
            dir.path(),
            &[
                "--workers",
                workers,
                "ce",
                "--model",
                &model("small-repair-2x2.gcm"),
                "--property",
                FAILURE,
                "--nj",
                "400",
                "--n-is",
                "800",
                "--seed",
                "17",
            ],
        );
        assert!(out.status.success());
        outputs.push((
            fs::read(dir.path().join("convergence.csv")).unwrap(),
            fs::read(dir.path().join("result.json")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn trace_mode_writes_the_visited_states() {
    let dir = TempDir::new().unwrap();
    let out = cesmc(dir.path(), &["trace", "--model", &model("tiny-t1.gcm"), "--property", "F x = 2", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.lines().count() >= 2);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = TempDir::new().unwrap();
    let bad_model = dir.path().join("bad.gcm");
    fs::write(&bad_model, "var x : [0..2] init 0;\n[a] x = 0 -> : x'=1;\n").unwrap();
    let code = |args: &[&str]| cesmc(dir.path(), args).status.code();

    assert_eq!(code(&["exact", "--model", bad_model.to_str().unwrap(), "--property", "F x = 1"]), Some(2));
    assert_eq!(code(&["exact", "--model", &model("tiny-t1.gcm"), "--property", "F (x = "]), Some(2));
    assert_eq!(
        code(&[
            "ce",
            "--model",
            &model("tiny-t1.gcm"),
            "--property",
            "F (x = 1 & X x = 2)",
            "--n0",
            "20",
            "--max-restarts",
            "2"
        ]),
        Some(3)
    );
    assert_eq!(
        code(&["ce", "--model", &model("tiny-t1.gcm"), "--property", "F x = 2", "--lambda", "1,1e-300", "--nj", "50"]),
        Some(4)
    );
    assert_eq!(code(&["exact", "--model", &model("repair.gcm"), "--property", FAILURE, "--cap", "1000"]), Some(5));
}
