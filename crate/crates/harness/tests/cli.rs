use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use bacf_unroll_harness::{csv_io, load_otb_sequence, Checkpoint};

const BIN: &str = env!("CARGO_BIN_EXE_bacf-unroll");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flags_and_missing_arguments_fail() {
    assert!(!run(&["track", "--no-such-flag"]).status.success());
    assert!(!run(&["train"]).status.success());
    assert!(!run(&["frobnicate"]).status.success());
    assert!(!run(&["--set", "grid_size=banana", "dump-params", "--fresh"]).status.success());
    assert!(!run(&["--set", "no_such_key=1", "dump-params", "--fresh"]).status.success());
}

#[test]
fn dump_params_fresh() {
    let out = run(&["dump-params", "--fresh"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "stage,lambda,rho,eta\n1,1,1,0.013\n2,1,1,0.013\n");
    let three = run(&["--set", "stages=3", "dump-params", "--fresh"]);
    assert_eq!(String::from_utf8(three.stdout).unwrap().lines().count(), 4);
}

#[test]
fn synth_track_eval() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    let status = run(&["synth", "--out", path(&seq), "--frames", "12", "--velocity-x", "1.5", "--noise", "0.01"]).status;
    assert!(status.success());
    let ds = load_otb_sequence(&seq).unwrap();
    assert_eq!(ds.len(), 12);

    let boxes = dir.path().join("boxes.csv");
    let out = run(&["--set", "grid_size=32", "track", "--sequence", path(&seq), "--out", path(&boxes)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let predicted = csv_io::read_boxes(fs::File::open(&boxes).unwrap()).unwrap();
    assert_eq!(predicted.len(), 12);
    assert_eq!(predicted[0], ds.boxes[0]);

    let metrics = dir.path().join("metrics.csv");
    let out = run(&["eval", "--pred", path(&boxes), "--truth", path(&seq), "--out", path(&metrics)]);
    assert!(out.status.success());
    let report = csv_io::read_metrics(fs::File::open(&metrics).unwrap()).unwrap();
    assert_eq!(report.frames, 12);
    assert!(report.mean_iou > 0.5, "mean IoU {}", report.mean_iou);
}

#[test]
fn train_writes_checkpoint_and_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("model.ckpt");
    let loss = dir.path().join("loss.csv");
    let out = run(&[
        "--set", "grid_size=16",
        "--set", "epochs=2",
        "--set", "stages=2",
        "train", "--synth", "2", "--synth-frames", "4",
        "--checkpoint-out", path(&ckpt),
        "--loss-out", path(&loss),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let model = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(model.updater.len(), 2);
    assert_eq!(model.config.tracker.grid_size, 16);
    let log = csv_io::read_loss(fs::File::open(&loss).unwrap()).unwrap();
    assert_eq!(log.len(), 4);

    let params = dir.path().join("params.csv");
    let mask = dir.path().join("mask.csv");
    let out = run(&["dump-params", "--checkpoint", path(&ckpt), "--out", path(&params), "--mask-out", path(&mask)]);
    assert!(out.status.success());
    let rows = csv_io::read_params(fs::File::open(&params).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].lambda, model.updater.stages[0].lambda);
    assert!(!csv_io::read_mask(fs::File::open(&mask).unwrap()).unwrap().is_empty());
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("grad.csv");
    let out = run(&["gradcheck", "--stages", "2", "--out", path(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 10);
}

#[test]
fn selftest_passes() {
    let out = run(&["selftest"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}
