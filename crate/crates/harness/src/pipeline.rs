//! Training and evaluation over whole sequence collections.

use std::thread;

use bacf_unroll::tracker::{track_sequence, TrackerModel};
use bacf_unroll::trainer::{joint_finetune, mean_total_loss, stagewise_train, EpochRecord, TrainDataset};
use bacf_unroll::{BoundingBox, ConvLayerParams, GrayImage, StageParams, UpdaterParams};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{eval_metrics, MetricsReport};

/// Frames with one ground-truth box each.
pub type Annotated = (Vec<GrayImage>, Vec<BoundingBox>);

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    /// Mean total loss of the untrained `K`-stage updater.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Stage-wise training, then joint finetuning when `joint.epochs > 0`.
pub fn train(sequences: &[Annotated], config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = TrainDataset::from_sequences_jittered(sequences, &config.tracker, config.train_jitter, config.stagewise.seed)?;
    let layer = if config.tracker.features.learnable {
        Some(ConvLayerParams::for_config(&config.tracker.features)?)
    } else {
        None
    };
    let initial = UpdaterParams::repeated(StageParams::initial(dataset.mask.clone()), config.stages)?;
    let initial_loss = mean_total_loss(&dataset, &initial, layer.as_ref())?;
    let (mut updater, mut log) = stagewise_train(&dataset, config.stages, &config.stagewise, layer.as_ref())?;
    let mut layer = layer;
    if config.joint.epochs > 0 {
        let (u, l, joint_log) = joint_finetune(&dataset, &updater, layer.as_ref(), &config.joint)?;
        updater = u;
        layer = l;
        log.extend(joint_log);
    }
    let final_loss = mean_total_loss(&dataset, &updater, layer.as_ref())?;
    Ok(TrainOutcome { checkpoint: Checkpoint { config: config.clone(), updater, layer }, log, initial_loss, final_loss })
}

/// Tracks every sequence from its first ground-truth box, one thread per
/// sequence.
pub fn track_all(sequences: &[Annotated], model: &TrackerModel) -> Result<Vec<Vec<BoundingBox>>> {
    thread::scope(|s| {
        let handles: Vec<_> = sequences
            .iter()
            .map(|(frames, boxes)| {
                s.spawn(move || -> Result<Vec<BoundingBox>> {
                    let first = boxes.first().ok_or_else(|| HarnessError::Invalid("sequence has no boxes".into()))?;
                    Ok(track_sequence(frames, first, model)?)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("tracking thread panicked")).collect()
    })
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub per_sequence: Vec<MetricsReport>,
    /// Mean over sequences of the per-sequence mean IoU.
    pub mean_iou: f64,
    pub mean_auc: f64,
}

pub fn evaluate(sequences: &[Annotated], model: &TrackerModel) -> Result<SuiteReport> {
    let tracks = track_all(sequences, model)?;
    let per_sequence = tracks
        .iter()
        .zip(sequences)
        .map(|(pred, (_, truth))| eval_metrics(pred, truth))
        .collect::<Result<Vec<_>>>()?;
    let n = per_sequence.len().max(1) as f64;
    Ok(SuiteReport {
        mean_iou: per_sequence.iter().map(|r| r.mean_iou).sum::<f64>() / n,
        mean_auc: per_sequence.iter().map(|r| r.auc).sum::<f64>() / n,
        per_sequence,
    })
}
