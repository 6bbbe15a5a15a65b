//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any of them fails.

use std::fs::{self, File};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bacf_unroll::tracker::track_sequence;
use bacf_unroll::trainer::{mean_total_loss, stagewise_train, TrainDataset};
use bacf_unroll::{ConvLayerParams, StageParams, UpdaterParams};
use bacf_unroll_harness::csv_io;
use bacf_unroll_harness::otb::load_otb_sequence;
use bacf_unroll_harness::pipeline::{self, Annotated};
use bacf_unroll_harness::selftest::{self, CheckOutcome};
use bacf_unroll_harness::synth::{synth_suite, Motion, Pan, SynthSpec};
use bacf_unroll_harness::{eval_metrics, Checkpoint, RunConfig};

const BIN: &str = env!("CARGO_BIN_EXE_bacf-unroll");

struct Line {
    name: &'static str,
    passed: bool,
    detail: String,
}

impl Line {
    fn from_check(name: &'static str, outcome: CheckOutcome) -> Self {
        let detail = outcome.line();
        Self { name, passed: outcome.passed, detail }
    }

    fn from_checks(name: &'static str, outcomes: Vec<CheckOutcome>) -> Self {
        let passed = outcomes.iter().all(|o| o.passed);
        let detail = outcomes.iter().map(CheckOutcome::line).collect::<Vec<_>>().join(" | ");
        Self { name, passed, detail }
    }

    fn failed(name: &'static str, err: impl std::fmt::Display) -> Self {
        Self { name, passed: false, detail: format!("error: {err}") }
    }
}

fn suite(count: usize, frames: usize, motion: Motion, pan: f64, seed: u64) -> Vec<Annotated> {
    let base = SynthSpec { frames, noise_std: 0.02, ..SynthSpec::default() };
    synth_suite(&base, count, motion, Pan { max_speed: pan }, seed)
        .expect("suite generation")
        .into_iter()
        .map(|s| (s.frames, s.boxes))
        .collect()
}

/// Same generator settings as `bacf-unroll train --synth`.
fn training_suite() -> Vec<Annotated> {
    suite(20, 20, Motion::RandomSpeed(4.0), 2.0, 100)
}

fn training_sanity(train: &[Annotated]) -> Result<Line, Box<dyn std::error::Error>> {
    // Plain ground-truth-centered pairs; a short, aggressive schedule.
    let mut config = RunConfig::default();
    config.stagewise.initial_rate = 1.0;
    config.stagewise.final_rate = 0.1;
    let dataset = TrainDataset::from_sequences(train, &config.tracker)?;
    let layer = ConvLayerParams::for_config(&config.tracker.features)?;
    let initial = UpdaterParams::repeated(StageParams::initial(dataset.mask.clone()), 2)?;
    let before = mean_total_loss(&dataset, &initial, Some(&layer))?;
    let start = Instant::now();
    let (trained, _) = stagewise_train(&dataset, 2, &config.stagewise, Some(&layer))?;
    let after = mean_total_loss(&dataset, &trained, Some(&layer))?;
    let drop = 1.0 - after / before;
    Ok(Line {
        name: "training sanity",
        passed: drop >= 0.5,
        detail: format!(
            "K=2, {} pairs, {} epochs/stage: loss {before:.4} -> {after:.4}, drop {:.1}% (need >= 50%) in {:.1?}",
            dataset.pair_count(),
            config.stagewise.epochs,
            100.0 * drop,
            start.elapsed()
        ),
    })
}

fn trend_and_floor(train: &[Annotated]) -> Result<(Line, Line), Box<dyn std::error::Error>> {
    let config = RunConfig::default();
    let outcome = pipeline::train(train, &config)?;
    // Stage-wise training never revisits stage 1, so the K=1 updater is the
    // first stage of the K=2 run bit for bit.
    let mut k1 = outcome.checkpoint.clone();
    k1.config.stages = 1;
    k1.updater = outcome.checkpoint.updater.prefix(1)?;
    let k2 = &outcome.checkpoint;

    let moving = suite(10, 30, Motion::ConstantSpeed(2.0), 0.0, 200);
    let still = suite(10, 20, Motion::Static, 0.0, 300);
    let r1 = pipeline::evaluate(&moving, &k1.model())?;
    let r2 = pipeline::evaluate(&moving, &k2.model())?;
    let trend = Line {
        name: "stage-count trend",
        passed: r2.mean_iou >= r1.mean_iou,
        detail: format!("{} held-out sequences: mean IoU K=2 {:.4} vs K=1 {:.4}", moving.len(), r2.mean_iou, r1.mean_iou),
    };

    let s2 = pipeline::evaluate(&still, &k2.model())?;
    let worst_static = s2.per_sequence.iter().map(|r| r.mean_iou).fold(f64::INFINITY, f64::min);

    let spec = SynthSpec { frames: 100, start_x: 60.0, velocity_x: 1.0, noise_std: 0.02, ..SynthSpec::default() };
    let long = bacf_unroll_harness::synth_sequence_gen(&spec)?;
    let model = k2.model();
    let start = Instant::now();
    let boxes = track_sequence(&long.frames, &long.boxes[0], &model)?;
    let elapsed = start.elapsed();

    let passed = r2.mean_iou >= 0.6 && s2.mean_iou >= 0.9 && elapsed < Duration::from_secs(5) && boxes.len() == 100;
    let floor = Line {
        name: "tracking floor",
        passed,
        detail: format!(
            "moving mean IoU {:.4} (need >= 0.6); static mean IoU {:.4}, worst sequence {:.4} (need >= 0.9); \
             100 frames at {}x{} grid in {:.2?} (need < 5 s)",
            r2.mean_iou, s2.mean_iou, worst_static, model.config.grid_size, model.config.grid_size, elapsed
        ),
    };
    Ok((trend, floor))
}

fn io_round_trips(train: &[Annotated]) -> Result<Line, Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut notes = Vec::new();

    let seq = bacf_unroll_harness::synth_sequence_gen(&SynthSpec { frames: 5, velocity_x: 1.5, noise_std: 0.05, ..SynthSpec::default() })?;
    let seq_dir = dir.path().join("seq");
    seq.write(&seq_dir)?;
    let loaded = load_otb_sequence(&seq_dir)?;
    let otb_ok = loaded.boxes == seq.boxes && loaded.load_frames()? == seq.frames;
    notes.push(format!("otb {otb_ok}"));

    let boxes = &train[0].1;
    let mut buf = Vec::new();
    csv_io::write_boxes(&mut buf, boxes)?;
    let boxes_ok = csv_io::read_boxes(buf.as_slice())? == *boxes;
    notes.push(format!("boxes {boxes_ok}"));

    let fresh = Checkpoint::fresh(RunConfig::default(), 24.0, 24.0)?;
    let mut updater = fresh.updater.clone();
    for (i, s) in updater.stages.iter_mut().enumerate() {
        s.lambda = 0.7 + i as f64 / 3.0;
        s.rho = 1.3;
        s.eta = 0.021;
    }
    let params = csv_io::param_rows(&updater);
    let mut buf = Vec::new();
    csv_io::write_params(&mut buf, &params)?;
    let params_ok = csv_io::read_params(buf.as_slice())? == params;
    notes.push(format!("params {params_ok}"));

    let mask = csv_io::mask_rows(&updater);
    let mut buf = Vec::new();
    csv_io::write_mask(&mut buf, &mask)?;
    let mask_ok = csv_io::read_mask(buf.as_slice())? == mask;
    notes.push(format!("mask {mask_ok}"));

    let mut shifted = boxes.clone();
    for b in &mut shifted {
        b.x += 1.25;
    }
    let report = eval_metrics(&shifted, boxes)?;
    let mut buf = Vec::new();
    csv_io::write_metrics(&mut buf, &report)?;
    let metrics_ok = csv_io::read_metrics(buf.as_slice())? == report;
    notes.push(format!("metrics {metrics_ok}"));

    let small: Vec<Annotated> = train.iter().take(2).map(|(f, b)| (f[..3].to_vec(), b[..3].to_vec())).collect();
    let mut quick = RunConfig::default();
    quick.stagewise.epochs = 2;
    let log = pipeline::train(&small, &quick)?.log;
    let mut buf = Vec::new();
    csv_io::write_loss(&mut buf, &log)?;
    let loss_ok = !log.is_empty() && csv_io::read_loss(buf.as_slice())? == log;
    notes.push(format!("loss {loss_ok}"));

    let ckpt = Checkpoint { updater, ..fresh };
    let ckpt_ok = Checkpoint::from_text(&ckpt.to_text())? == ckpt;
    notes.push(format!("checkpoint {ckpt_ok}"));

    let out = Command::new(BIN).args(["dump-params", "--fresh"]).output()?;
    let text = String::from_utf8(out.stdout)?;
    let rows = csv_io::read_params(text.as_bytes())?;
    let dump_ok = out.status.success()
        && rows.len() == 2
        && rows.iter().all(|r| r.lambda == 1.0 && r.rho == 1.0 && r.eta == 0.013)
        && text.lines().nth(1) == Some("1,1,1,0.013");
    notes.push(format!("dump-params {dump_ok}: {}", text.lines().nth(1).unwrap_or("")));

    let truth_path = dir.path().join("truth.csv");
    csv_io::write_boxes(File::create(&truth_path)?, boxes)?;
    let metrics_path = dir.path().join("metrics.csv");
    let status = Command::new(BIN)
        .args(["eval", "--pred"])
        .arg(&truth_path)
        .arg("--truth")
        .arg(&truth_path)
        .arg("--out")
        .arg(&metrics_path)
        .output()?
        .status;
    let cli_eval = csv_io::read_metrics(fs::read(&metrics_path)?.as_slice())?;
    let eval_ok = status.success() && cli_eval.auc == 1.0;
    notes.push(format!("cli eval {eval_ok}"));

    let passed = otb_ok && boxes_ok && params_ok && mask_ok && metrics_ok && loss_ok && ckpt_ok && dump_ok && eval_ok;
    Ok(Line { name: "I/O round trips", passed, detail: notes.join(", ") })
}

fn main() -> ExitCode {
    let seed = 0;
    let mut lines = Vec::new();
    let mut record = |line: Line| {
        println!("{} {}: {}", if line.passed { "PASS" } else { "FAIL" }, line.name, line.detail);
        lines.push(line.passed);
    };

    let check = |name, r: bacf_unroll_harness::Result<CheckOutcome>| match r {
        Ok(o) => Line::from_check(name, o),
        Err(e) => Line::failed(name, e),
    };
    record(check("f-subproblem oracle", selftest::f_subproblem(20, seed)));
    record(check("h-subproblem oracle", selftest::h_subproblem(20, seed + 1)));
    record(check("ADMM against KKT oracle", selftest::admm_kkt(10, seed + 2)));
    record(Line::from_checks("gradient fidelity", vec![selftest::gradient_fidelity(3)]));
    record(check("unrolling consistency", selftest::unrolling_consistency(20, seed + 3)));

    let train = training_suite();
    record(training_sanity(&train).unwrap_or_else(|e| Line::failed("training sanity", e)));
    match trend_and_floor(&train) {
        Ok((trend, floor)) => {
            record(trend);
            record(floor);
        }
        Err(e) => {
            record(Line::failed("stage-count trend", &e));
            record(Line::failed("tracking floor", e));
        }
    }
    record(check("argmax scale invariance", selftest::scale_invariance(100, seed + 4)));
    record(io_round_trips(&train).unwrap_or_else(|e| Line::failed("I/O round trips", e)));

    let failed = lines.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
