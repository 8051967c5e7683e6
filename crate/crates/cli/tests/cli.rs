use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spikegrad::data::{encode_idx, LabeledImages};

fn spikegrad(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikegrad"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("SPIKEGRAD_OUT")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn synthetic_mnist(dir: &Path, n: usize) -> (String, String) {
    let images = LabeledImages {
        rows: 28,
        cols: 28,
        pixels: (0..n * 784).map(|i| ((i * 37) % 256) as u8).collect(),
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    };
    let (img, lab) = encode_idx(&images);
    let (pi, pl) = (dir.join("img.idx3"), dir.join("lab.idx1"));
    fs::write(&pi, img).unwrap();
    fs::write(&pl, lab).unwrap();
    (pi.display().to_string(), pl.display().to_string())
}

#[test]
fn gradcheck_default_passes_with_100_rows() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(&["gradcheck"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("gradcheck.csv"));
    assert_eq!(rows[0], ["instance_id", "seed", "layers", "max_rel_err"]);
    assert_eq!(rows.len(), 101);
    assert!(String::from_utf8_lossy(&o.stdout).contains("suite max relative error"));
}

#[test]
fn gradcheck_tiny_tolerance_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(&["gradcheck", "--tol", "1e-12"], dir.path());
    assert_eq!(code(&o), 1);
    let m = fs::read_to_string(dir.path().join("gradcheck.manifest.toml")).unwrap();
    assert!(m.contains("status = \"check-failed\""));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["gradcheck", "--instances", "0"][..],
        &["toy", "--bogus"],
        &["toy", "--lr", "abc"],
        &["sweep", "--lrs", ""],
        &["toy", "--tau-m", "0"],
        &["nonsense"],
    ] {
        assert_eq!(code(&spikegrad(args, dir.path())), 2, "{args:?}");
    }
}

#[test]
fn toy_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(code(&spikegrad(&["toy", "--seed", "7", "--lr", "0.005"], out)), 0);
    }
    for f in ["toy.csv", "toy_convergence.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    let rows = csv_rows(&a.join("toy.csv"));
    assert_eq!(rows[0], ["iteration", "seed", "variant", "loss"]);
    assert_eq!(rows.len(), 1 + 2 * 200);
    assert_eq!(rows[1], ["0", "7", "reset_on", &rows[201][3]]);
}

#[test]
fn sweep_grid_has_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(&["sweep", "--lrs", "0.001,0.005,0.01,0.02", "--seeds", "20"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows[0], ["lr", "iteration", "variant", "mean_loss", "std_loss"]);
    assert_eq!(rows.len() - 1, 4 * 2 * 200);
    let cells: BTreeSet<(String, String)> = rows[1..].iter().map(|r| (r[0].clone(), r[2].clone())).collect();
    assert_eq!(cells.len(), 8);
    assert_eq!(csv_rows(&dir.path().join("sweep_final.csv")).len(), 1 + 8 * 20);
}

#[test]
fn toy_phases_dump() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&spikegrad(&["toy", "--phases", "--iterations", "3"], dir.path())), 0);
    let rows = csv_rows(&dir.path().join("toy_phases_seed0_reset_on.csv"));
    assert_eq!(rows[0], ["step", "phase_a", "phase_b", "phase_c", "phase_d"]);
    assert_eq!(rows.len(), 101);
    assert!(rows[1..].iter().all(|r| r.len() == 5));
    assert!(dir.path().join("toy_phases_seed0_reset_off.csv").exists());
}

#[test]
fn no_reset_term_runs_one_variant() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(&["toy", "--no-reset-term", "--iterations", "5", "--seeds", "2"], dir.path());
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&dir.path().join("toy.csv"));
    assert_eq!(rows.len(), 1 + 2 * 5);
    assert!(rows[1..].iter().all(|r| r[2] == "reset_off"));
}

#[test]
fn missing_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(&["mnist", "--mnist-images", "/nonexistent/images", "--mnist-labels", "/nonexistent/labels"], dir.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/images"));
    let m = fs::read_to_string(dir.path().join("mnist.manifest.toml")).unwrap();
    assert!(m.contains("status = \"error\""));
}

#[test]
fn mnist_on_synthetic_idx() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = synthetic_mnist(dir.path(), 40);
    let out = dir.path().join("out");
    let args = [
        "mnist", "--mnist-images", &img, "--mnist-labels", &lab, "--subset", "20", "--epochs", "2", "--seeds", "2",
        "--hidden", "8", "--batch", "5", "--svg",
    ];
    let o = spikegrad(&args, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("mnist.csv"));
    assert_eq!(rows[0], ["epoch", "seed", "variant", "train_acc", "test_acc"]);
    assert_eq!(rows.len(), 1 + 2 * 2 * 3);
    assert!(out.join("mnist_seed1_reset_off.ckpt").exists());
    assert!(out.join("mnist.svg").exists());

    let too_big = spikegrad(&["mnist", "--mnist-images", &img, "--mnist-labels", &lab, "--subset", "21"], &out);
    assert_eq!(code(&too_big), 2);
}

#[test]
fn manifest_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let o = spikegrad(
        &["toy", "--seeds", "2", "--iterations", "10", "--phases", "--svg", "--checkpoints"],
        dir.path(),
    );
    assert_eq!(code(&o), 0);
    let m: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("toy.manifest.toml")).unwrap()).unwrap();
    assert_eq!(m["status"].as_str(), Some("ok"));
    assert_eq!(m["command"].as_str(), Some("toy"));
    let mut listed: BTreeSet<String> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    listed.insert("toy.manifest.toml".into());
    let on_disk: BTreeSet<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(listed, on_disk);
    assert_eq!(m["config"]["lr"].as_str(), Some("0.005"));
    assert_eq!(m["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    assert_eq!(code(&spikegrad(&["toy", "--seeds", "3", "--iterations", "20", "--lr", "0.02"], &first)), 0);
    let second = dir.path().join("second");
    let o = Command::new(env!("CARGO_BIN_EXE_spikegrad"))
        .arg("replay")
        .arg(first.join("toy.manifest.toml"))
        .arg("--out")
        .arg(&second)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for f in ["toy.csv", "toy_convergence.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap());
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_spikegrad"))
        .args(["replay", "/nonexistent/x.manifest.toml"])
        .output()
        .unwrap();
    assert_eq!(code(&missing), 3);
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_spikegrad"))
        .args(["toy", "--iterations", "2"])
        .env("SPIKEGRAD_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(out.join("toy.csv").exists());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "iterations = 4\nlr = 0.5\nseeds = \"0..2\"\n").unwrap();
    let out = dir.path().join("out");
    let o = spikegrad(&["toy", "--config", cfg.to_str().unwrap(), "--lr", "0.01"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: toml::Table = toml::from_str(&fs::read_to_string(out.join("toy.manifest.toml")).unwrap()).unwrap();
    assert_eq!(m["config"]["lr"].as_str(), Some("0.01"));
    assert_eq!(m["config"]["iterations"].as_str(), Some("4"));
    assert_eq!(m["config"]["seeds"].as_str(), Some("0,1"));
    assert!(!m["args"].as_array().unwrap().iter().any(|a| a.as_str() == Some("--config")));
}
