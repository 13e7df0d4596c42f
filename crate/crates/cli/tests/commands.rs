//! End-to-end checks of the `abmil` binary: exit codes, produced files,
//! and manifest-driven reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn abmil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_abmil"))
        .args(args)
        .output()
        .expect("spawn abmil")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL_DATASET: &str = "\
[dataset]
seed = 11
n_train_bags = 4
n_val_bags = 2
n_test_bags = 2
instances_per_bag = 8
key_fraction = 0.25
key_class = 1
n_classes = 3
input_dim = 8
samples_per_class = 150
";

const SMALL_TRAIN: &str = "\
[train]
strategy = accumulate
alpha_percent = 25
epochs = 2
seed = 11
hidden = 6,4
attention_dim = 3
";

#[test]
fn gen_train_eval_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        &format!("{SMALL_DATASET}{SMALL_TRAIN}[eval]\ninference_sample_percent = 50\n"),
    );
    let data_dir = tmp.path().join("data");
    let train_dir = tmp.path().join("train");
    let eval_dir = tmp.path().join("eval");

    let out = abmil(&["gen", "--config", &cfg, "--out", data_dir.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(data_dir.join("train.bags").exists());
    assert!(data_dir.join("manifest.txt").exists());
    assert!(data_dir.join("run.manifest").exists());

    let out = abmil(&[
        "train",
        "--config",
        &cfg,
        "--dataset",
        data_dir.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(train_dir.join("best.params").exists());
    let history = fs::read_to_string(train_dir.join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,train_loss,val_loss,val_error,wall_ms,fwd_count,peak_scalars"
    );
    // Accumulation reports 2n encoder forwards per step: 4 bags x 8 x 2.
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[5], "64");
    assert_eq!(history.lines().count(), 3); // header + 2 epochs

    let out = abmil(&[
        "eval",
        "--config",
        &cfg,
        "--params",
        train_dir.join("best.params").to_str().unwrap(),
        "--dataset",
        data_dir.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let eval_csv = fs::read_to_string(eval_dir.join("eval.csv")).unwrap();
    assert!(eval_csv.starts_with("bag_acc,inst_auc"));
}

#[test]
fn full_bag_history_counts_single_forwards() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "run.cfg",
        &format!("{SMALL_DATASET}[train]\nstrategy = full_bag\nepochs = 1\nseed = 11\nhidden = 6,4\nattention_dim = 3\n"),
    );
    let data_dir = tmp.path().join("data");
    let train_dir = tmp.path().join("train");
    assert!(
        abmil(&["gen", "--config", &cfg, "--out", data_dir.to_str().unwrap()])
            .status
            .success()
    );
    assert!(abmil(&[
        "train",
        "--config",
        &cfg,
        "--dataset",
        data_dir.to_str().unwrap(),
        "--out",
        train_dir.to_str().unwrap(),
    ])
    .status
    .success());
    let history = fs::read_to_string(train_dir.join("history.csv")).unwrap();
    let row: Vec<&str> = history.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "32"); // 4 bags x 8 instances
}

#[test]
fn gen_rerun_from_manifest_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "run.cfg", SMALL_DATASET);
    let d1 = tmp.path().join("d1");
    let d2 = tmp.path().join("d2");
    assert!(
        abmil(&["gen", "--config", &cfg, "--out", d1.to_str().unwrap()])
            .status
            .success()
    );
    let manifest = d1.join("run.manifest");
    assert!(abmil(&[
        "gen",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        d2.to_str().unwrap(),
    ])
    .status
    .success());
    for f in ["train.bags", "val.bags", "test.bags"] {
        let a = fs::read(d1.join(f)).unwrap();
        let b = fs::read(d2.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between original and manifest rerun");
    }
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "[dataset]\nnot_a_key = 5\n");
    let out = abmil(&[
        "gen",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_key"), "{stderr}");
    assert!(stderr.contains("valid keys"), "{stderr}");
}

#[test]
fn zero_key_fraction_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "[dataset]\nkey_fraction = 0\n");
    let out = abmil(&[
        "gen",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_exits_3() {
    let out = abmil(&[
        "gen",
        "--config",
        "/nonexistent/nope.cfg",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn matrix_rows_follow_alpha_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "m.cfg",
        "[dataset]\nseed = 3\nn_train_bags = 3\nn_val_bags = 2\nn_test_bags = 2\ninstances_per_bag = 6\nkey_fraction = 0.34\nkey_class = 1\nn_classes = 3\ninput_dim = 8\nsamples_per_class = 120\n\
         [train]\nepochs = 1\nhidden = 6,4\nattention_dim = 3\n\
         [matrix]\nstrategies = accumulate\nalphas = 25,50,100\ninference_samples = 100\nrepeats = 1\nseed = 3\n",
    );
    let out_dir = tmp.path().join("matrix");
    let out = abmil(&[
        "matrix",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(out_dir.join("matrix.csv")).unwrap();
    let data_rows = csv.lines().count() - 1;
    // 3 alphas x (1 raw + mean + std)
    assert_eq!(data_rows, 9);
    // Adding alpha = 3 yields one more cell.
    let cfg4 = fs::read_to_string(&cfg)
        .unwrap()
        .replace("alphas = 25,50,100", "alphas = 3,25,50,100");
    let cfg4 = write_cfg(tmp.path(), "m4.cfg", &cfg4);
    let out_dir4 = tmp.path().join("matrix4");
    assert!(abmil(&[
        "matrix",
        "--config",
        &cfg4,
        "--out",
        out_dir4.to_str().unwrap()
    ])
    .status
    .success());
    let csv4 = fs::read_to_string(out_dir4.join("matrix.csv")).unwrap();
    assert_eq!(csv4.lines().count() - 1, 12);
}

#[test]
fn empty_alpha_list_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "m.cfg",
        "[dataset]\nseed = 3\n[train]\nepochs = 1\n[matrix]\nalphas =\n",
    );
    let out = abmil(&[
        "matrix",
        "--config",
        &cfg,
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_smoke_passes_and_reports_bn_discrepancy() {
    let out = abmil(&["verify", "--scale", "smoke"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}");
    assert!(stdout.contains("PASS grad_equivalence"), "{stdout}");
    assert!(stdout.contains("discrepancy confirmed"), "{stdout}");
    assert!(stdout.contains("auc_oracle"), "{stdout}");
    let lines = stdout
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"));
    assert!(lines.count() >= 10, "{stdout}");
}

#[test]
fn verify_rejects_unknown_scale() {
    let out = abmil(&["verify", "--scale", "huge"]);
    assert_eq!(out.status.code(), Some(2));
}
