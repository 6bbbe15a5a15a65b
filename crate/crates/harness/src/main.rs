use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bacf_unroll::gradcheck::{finite_diff_check, GradCheckSetup};
use bacf_unroll::tracker::track_sequence;
use bacf_unroll::BoundingBox;
use bacf_unroll_harness::csv_io;
use bacf_unroll_harness::error::{HarnessError, Result};
use bacf_unroll_harness::otb::{load_otb_collection, load_otb_sequence};
use bacf_unroll_harness::pipeline::{self, Annotated};
use bacf_unroll_harness::synth::{self, Motion, Pan, SynthSpec};
use bacf_unroll_harness::{eval_metrics, selftest, Checkpoint, RunConfig};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bacf-unroll", version, about = "Unrolled background-aware correlation filter tracker")]
struct Cli {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one OTB-style sequence and write a boxes CSV
    Track {
        #[arg(long)]
        sequence: PathBuf,
        /// Trained parameters; untrained defaults when omitted
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the updater and write a checkpoint and a loss CSV
    Train(TrainArgs),
    /// Score predicted boxes against ground truth
    Eval {
        /// Boxes CSV
        #[arg(long)]
        pred: PathBuf,
        /// Boxes CSV or OTB sequence directory
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle suites
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic gradients against central differences
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        stages: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Per-entry CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a synthetic sequence in OTB layout
    Synth(SynthArgs),
    /// Write per-stage lambda, rho, eta and the mask weights as CSV
    DumpParams {
        #[arg(long, conflicts_with = "fresh", required_unless_present = "fresh")]
        checkpoint: Option<PathBuf>,
        /// Use untrained parameters
        #[arg(long)]
        fresh: bool,
        #[arg(long, default_value_t = 32.0)]
        target_width: f64,
        #[arg(long, default_value_t = 32.0)]
        target_height: f64,
        /// Params CSV; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mask_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of OTB-style sequences
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,
    /// Train on this many generated sequences instead
    #[arg(long)]
    synth: Option<usize>,
    #[arg(long, default_value_t = 20)]
    synth_frames: usize,
    /// Maximum generated target speed in pixels per frame
    #[arg(long, default_value_t = 4.0)]
    synth_speed: f64,
    /// Maximum generated background pan speed in pixels per frame
    #[arg(long, default_value_t = 2.0)]
    synth_pan: f64,
    #[arg(long, default_value_t = 0)]
    synth_seed: u64,
    #[arg(long)]
    checkpoint_out: PathBuf,
    #[arg(long)]
    loss_out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 24.0)]
    target_width: f64,
    #[arg(long, default_value_t = 24.0)]
    target_height: f64,
    /// First-frame target center; frame center when omitted
    #[arg(long)]
    start_x: Option<f64>,
    #[arg(long)]
    start_y: Option<f64>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    velocity_x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    velocity_y: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pan_x: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pan_y: f64,
    #[arg(long, default_value_t = 1.0)]
    scale_drift: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|source| HarnessError::Io { path: p.into(), source })?),
        None => Box::new(io::stdout().lock()),
    })
}

fn load_config(cli: &Cli, base: RunConfig) -> Result<RunConfig> {
    let mut config = base;
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?;
        config.apply_text(&text)?;
    }
    for pair in &cli.overrides {
        config.apply_override(pair)?;
    }
    config.validate()?;
    Ok(config)
}

fn load_truth(path: &Path) -> Result<Vec<BoundingBox>> {
    if path.is_dir() {
        return Ok(load_otb_sequence(path)?.boxes);
    }
    csv_io::read_boxes(File::open(path).map_err(|source| HarnessError::Io { path: path.into(), source })?)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Track { sequence, checkpoint, out } => {
            let ds = load_otb_sequence(sequence)?;
            let first = *ds.boxes.first().ok_or_else(|| HarnessError::Invalid("empty sequence".into()))?;
            let ckpt = match checkpoint {
                Some(p) => {
                    let mut c = Checkpoint::load(p)?;
                    c.config = load_config(cli, c.config)?;
                    c
                }
                None => Checkpoint::fresh(load_config(cli, RunConfig::default())?, first.width, first.height)?,
            };
            let boxes = track_sequence(&ds.load_frames()?, &first, &ckpt.model())?;
            csv_io::write_boxes(output(out.as_deref())?, &boxes)?;
            Ok(true)
        }
        Command::Train(args) => {
            let config = load_config(cli, RunConfig::default())?;
            let sequences: Vec<Annotated> = match (&args.data, args.synth) {
                (Some(dir), _) => load_otb_collection(dir)?
                    .into_iter()
                    .map(|ds| Ok((ds.load_frames()?, ds.boxes)))
                    .collect::<Result<_>>()?,
                (None, Some(count)) => {
                    let base = SynthSpec { frames: args.synth_frames, noise_std: 0.02, ..SynthSpec::default() };
                    synth::synth_suite(
                        &base,
                        count,
                        Motion::RandomSpeed(args.synth_speed),
                        Pan { max_speed: args.synth_pan },
                        args.synth_seed,
                    )?
                        .into_iter()
                        .map(|s| (s.frames, s.boxes))
                        .collect()
                }
                (None, None) => unreachable!("clap requires --data or --synth"),
            };
            let outcome = pipeline::train(&sequences, &config)?;
            outcome.checkpoint.save(&args.checkpoint_out)?;
            if let Some(p) = &args.loss_out {
                csv_io::write_loss(output(Some(p))?, &outcome.log)?;
            }
            eprintln!("mean total loss {:.6} -> {:.6}", outcome.initial_loss, outcome.final_loss);
            Ok(true)
        }
        Command::Eval { pred, truth, out } => {
            let predicted = csv_io::read_boxes(File::open(pred).map_err(|source| HarnessError::Io { path: pred.clone(), source })?)?;
            let report = eval_metrics(&predicted, &load_truth(truth)?)?;
            csv_io::write_metrics(output(out.as_deref())?, &report)?;
            eprintln!("AUC {:.4}, precision@20 {:.4}, mean IoU {:.4}", report.auc, report.precision_at_20, report.mean_iou);
            Ok(true)
        }
        Command::Selftest { seed } => {
            let outcomes = selftest::run_all(*seed)?;
            for o in &outcomes {
                println!("{}", o.line());
            }
            Ok(outcomes.iter().all(|o| o.passed))
        }
        Command::Gradcheck { stages, seed, step, tol, out } => {
            let setup = GradCheckSetup { stages: *stages, seed: *seed, ..GradCheckSetup::default() };
            let report = finite_diff_check(&setup, *step, *tol);
            if let Some(p) = out {
                fs::write(p, report.to_csv()).map_err(|source| HarnessError::Io { path: p.clone(), source })?;
            }
            println!("{}", report.summary());
            Ok(report.passed)
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                width: a.width,
                height: a.height,
                frames: a.frames,
                target_width: a.target_width,
                target_height: a.target_height,
                start_x: a.start_x.unwrap_or(a.width as f64 / 2.0),
                start_y: a.start_y.unwrap_or(a.height as f64 / 2.0),
                velocity_x: a.velocity_x,
                velocity_y: a.velocity_y,
                background_velocity_x: a.pan_x,
                background_velocity_y: a.pan_y,
                scale_drift: a.scale_drift,
                noise_std: a.noise,
                seed: a.seed,
            };
            let ds = synth::synth_sequence_gen(&spec)?.write(&a.out)?;
            eprintln!("wrote {} frames to {}", ds.len(), a.out.display());
            Ok(true)
        }
        Command::DumpParams { checkpoint, fresh, target_width, target_height, out, mask_out } => {
            let ckpt = if *fresh {
                Checkpoint::fresh(load_config(cli, RunConfig::default())?, *target_width, *target_height)?
            } else {
                let path = checkpoint.as_ref().expect("clap requires --checkpoint without --fresh");
                Checkpoint::load(path)?
            };
            csv_io::write_params(output(out.as_deref())?, &csv_io::param_rows(&ckpt.updater))?;
            if let Some(p) = mask_out {
                csv_io::write_mask(output(Some(p))?, &csv_io::mask_rows(&ckpt.updater))?;
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
