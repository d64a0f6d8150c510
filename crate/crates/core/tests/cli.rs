//! The `slgt` binary end to end: exit codes, reports and the
//! synth -> train -> eval -> infer round trip.

use std::path::Path;
use std::process::{Command, Output};

use slgtformer::data::{Manifest, Split};
use slgtformer::spatial::read_attention_trace;

fn slgt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slgt")).args(args).output().expect("run slgt")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn narrow_config(dir: &Path, classes: usize, lr: f64, epochs: usize) -> String {
    let path = dir.join(format!("cfg_{classes}_{epochs}.toml"));
    let body = format!(
        r#"[model]
d_emb = 16
heads = 2
mlp_ratio = 2
groups = 2
d_pos = 4
h_meta = 16
num_classes = {classes}
stages = [{{ blocks = 1, sub_sample = 8 }}, {{ blocks = 1, sub_sample = 1 }}]

[train]
epochs = {epochs}
batch_size = 4

[train.optimizer]
lr = {lr:e}
"#
    );
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn argument_errors_exit_2() {
    assert_eq!(slgt(&[]).status.code(), Some(2));
    assert_eq!(slgt(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(slgt(&["bench", "--ablate", "nothing"]).status.code(), Some(2));
    // train without a dataset
    assert_eq!(slgt(&["train"]).status.code(), Some(2));
    assert_eq!(slgt(&["--help"]).status.code(), Some(0));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[model]\nd_emb = 16\nwidth_multiplier = 2\n").unwrap();
    let out = slgt(&["gradcheck", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("width_multiplier"), "{}", text(&out.stderr));
}

#[test]
fn bad_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("x.ckpt");
    std::fs::write(&ck, b"not a checkpoint").unwrap();
    let out = slgt(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", "missing.txt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_pass() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.txt");
    let out = slgt(&["gradcheck", "--out", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let last = stdout.lines().last().unwrap();
    assert!(last.starts_with("PASS, max rel err"), "{last}");
    assert!(last.contains("< 1e-4"), "{last}");
    assert_eq!(std::fs::read_to_string(report).unwrap(), stdout);
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = slgt(&["synth", "--classes", "2", "--per-class", "4", "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let cfg = narrow_config(dir.path(), 2, 1e300, 3);
    let run = dir.path().join("run");
    let out = slgt(&[
        "train",
        "--config",
        &cfg,
        "--data",
        data.join("manifest.txt").to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
    assert!(run.join("nan_batch.txt").exists());
}

#[test]
fn synth_train_eval_infer_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = slgt(&["synth", "--classes", "6", "--per-class", "8", "--seed", "5", "--out", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let manifest = data.join("manifest.txt");
    let cfg = narrow_config(dir.path(), 6, 1e-3, 3);
    let run = dir.path().join("run");
    let out = slgt(&["train", "--config", &cfg, "--data", manifest.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let metrics = std::fs::read_to_string(run.join("metrics.log")).unwrap();
    assert_eq!(metrics.lines().count(), 3);

    let ck = run.join("best.ckpt");
    let out = slgt(&["eval", "--checkpoint", ck.to_str().unwrap(), "--data", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let line = text(&out.stdout);
    assert!(line.starts_with("eval samples="), "{line}");

    // held-out files of two classes: the true class is among the five listed
    let m = Manifest::load(&manifest).unwrap();
    let picks: Vec<_> = [0, 3]
        .iter()
        .map(|&c| m.samples.iter().find(|e| e.split == Split::Test && e.label == c).unwrap())
        .collect();
    for e in picks {
        let trace = dir.path().join("trace.bin");
        let out = slgt(&[
            "infer",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            data.join(&e.path).to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        let stdout = text(&out.stdout);
        assert_eq!(stdout.lines().count(), 5);
        let name = &m.classes[e.label];
        assert!(stdout.lines().any(|l| l.contains(&format!("name={name} "))), "{name} not in\n{stdout}");
        assert!(!read_attention_trace(&trace).unwrap().is_empty());
    }

    // a config that disagrees with the dataset's class count is rejected
    let wrong = narrow_config(dir.path(), 4, 1e-3, 1);
    let out = slgt(&["train", "--config", &wrong, "--data", manifest.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
