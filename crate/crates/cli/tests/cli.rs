use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
    "train_size": 8, "val_size": 2, "test_size": 4, "iterations": 3,
    "long_iterations": 20, "tune_samples": 2,
    "mu_grid": [0.01, 0.1], "beta_grid": [0.0, 0.5],
    "training": {"eta": 0.3, "epochs": 2, "batch_size": 4}
}"#;

fn modbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modbf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn path_arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn body(csv: &str) -> String {
    csv.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let out = modbf(&["experiment", "quantized", "--scenario", "s9"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("s9"));
}

#[test]
fn unknown_flag_is_a_config_error() {
    assert_eq!(code(&modbf(&["train", "--bogus"])), 2);
}

#[test]
fn malformed_and_unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{\"train_size\": ");
    assert_eq!(code(&modbf(&["gen-data", "--config", path_arg(&cfg), "--out", "x.json"])), 2);
    let cfg = write_config(dir.path(), "{\"trian_size\": 3}");
    let out = modbf(&["gen-data", "--config", path_arg(&cfg), "--out", "x.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("trian_size"));
}

#[test]
fn missing_theta_points_at_train() {
    let dir = tempfile::tempdir().unwrap();
    let theta = dir.path().join("absent.json");
    let out = modbf(&["eval", "--scenario", "s4", "--theta", path_arg(&theta)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("modbf train"));
    let out = modbf(&["experiment", "rate-iter", "--scenario", "s4"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gen_data_writes_three_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("data.json");
    let res = modbf(&["gen-data", "--scenario", "s4", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    for split in ["train", "val", "test"] {
        assert!(dir.path().join(format!("data.{split}.json")).exists(), "{split}");
    }
}

#[test]
fn train_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let theta = dir.path().join("theta.json");
    let losses = dir.path().join("loss.csv");
    let res = modbf(&[
        "train", "--scenario", "s4", "--config", path_arg(&cfg), "--theta", path_arg(&theta), "--out", path_arg(&losses),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    assert_eq!(body(&fs::read_to_string(&losses).unwrap()).lines().count(), 3);

    let evals = dir.path().join("eval.csv");
    let res = modbf(&["eval", "--scenario", "s4", "--config", path_arg(&cfg), "--theta", path_arg(&theta), "--out", path_arg(&evals)]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(&evals).unwrap();
    assert!(text.starts_with("# "));
    // header plus j = 0..=3
    assert_eq!(body(&text).lines().count(), 5);

    let res = modbf(&[
        "experiment", "rate-iter", "--scenario", "s4", "--config", path_arg(&cfg), "--theta", path_arg(&theta),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("u-pga-m,3,")));
}

#[test]
fn overflowing_snr_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let theta = dir.path().join("theta.json");
    let res = modbf(&["train", "--scenario", "s4", "--config", path_arg(&cfg), "--theta", path_arg(&theta), "--out", path_arg(&dir.path().join("l.csv"))]);
    assert_eq!(code(&res), 0);
    let res = modbf(&["eval", "--scenario", "s4", "--config", path_arg(&cfg), "--theta", path_arg(&theta), "--snr-db", "3090"]);
    assert_eq!(code(&res), 3, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn experiment_reruns_produce_identical_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let res = modbf(&["experiment", "quantized", "--scenario", "s4", "--q-levels", "8", "--config", path_arg(&cfg), "--out", path_arg(&out)]);
        assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
        fs::read_to_string(out).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(body(&a), body(&b));
    assert!(body(&a).lines().count() > 1);
}
