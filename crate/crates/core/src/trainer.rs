//! Stage-wise training of the updater followed by joint finetuning with the
//! representor, using minibatch SGD with an exponentially decaying rate.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bacf::{admm_solve, CropOperator, StageParams};
use crate::error::{Error, Result};
use crate::grad::{backward_weighted, StageGradient};
use crate::image::GrayImage;
use crate::math;
use crate::representor::{apply_layer, base_channels, representor_backward, ConvGradient, ConvLayerParams, FeatureConfig};
use crate::tensor::RealTensor3;
use crate::tracker::{BoundingBox, TrackerConfig};
use crate::updater::{forward, total_loss, UpdaterParams};

/// Base channels and labels of two consecutive frames, both cropped around
/// the (possibly jittered) ground-truth center of the earlier frame. The
/// first label is always centered, as in tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub base: RealTensor3,
    pub base_next: RealTensor3,
    /// Peaked at the grid center.
    pub label: RealTensor3,
    /// Peaked where the target sits in the next frame.
    pub label_next: RealTensor3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub pairs: Vec<FramePair>,
}

/// Training data plus the geometry every sample shares.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainDataset {
    pub sequences: Vec<TrainSequence>,
    pub features: FeatureConfig,
    /// Binary crop operator of the filter support.
    pub mask: CropOperator,
    pub init_iterations: usize,
    pub init_tolerance: f64,
}

impl TrainDataset {
    /// Builds the dataset from annotated frame sequences. All targets must
    /// map to the same filter support.
    pub fn from_sequences(sequences: &[(Vec<GrayImage>, Vec<BoundingBox>)], config: &TrackerConfig) -> Result<Self> {
        Self::from_sequences_jittered(sequences, config, 0.0, 0)
    }

    /// Like `from_sequences`, but each crop center is offset from the ground
    /// truth by a uniform draw in `[-jitter, jitter]` target sizes per axis,
    /// mimicking the localization error the filter sees while tracking.
    pub fn from_sequences_jittered(
        sequences: &[(Vec<GrayImage>, Vec<BoundingBox>)],
        config: &TrackerConfig,
        jitter: f64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::InvalidArgument("jitter must be finite and non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask: Option<CropOperator> = None;
        let mut out = Vec::with_capacity(sequences.len());
        for (frames, boxes) in sequences {
            if frames.len() != boxes.len() || frames.len() < 2 {
                return Err(Error::InvalidArgument("each sequence needs at least two frames and one box per frame"));
            }
            let seq_mask = config.mask_for(boxes[0].width, boxes[0].height)?;
            match &mask {
                Some(m) if !m.same_geometry(&seq_mask) => {
                    return Err(Error::InvalidArgument("targets map to different filter supports"));
                }
                None => mask = Some(seq_mask),
                _ => {}
            }
            out.push(sequence_pairs(frames, boxes, config, jitter, &mut rng)?);
        }
        let mask = mask.ok_or(Error::InvalidArgument("dataset has no sequences"))?;
        Ok(Self {
            sequences: out,
            features: config.features.clone(),
            mask,
            init_iterations: config.init_iterations,
            init_tolerance: config.init_tolerance,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.sequences.iter().map(|s| s.pairs.len()).sum()
    }
}

fn sequence_pairs(
    frames: &[GrayImage],
    boxes: &[BoundingBox],
    config: &TrackerConfig,
    jitter: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrainSequence> {
    let px = config.patch_pixels();
    let mut pairs = Vec::with_capacity(frames.len() - 1);
    for t in 0..frames.len() - 1 {
        let b = &boxes[t];
        let (mut cx, mut cy) = b.center();
        // The first frame is where tracking starts, so it stays exact.
        if jitter > 0.0 && t > 0 {
            cx += jitter * b.width * rng.random_range(-1.0..=1.0);
            cy += jitter * b.height * rng.random_range(-1.0..=1.0);
        }
        let (nx, ny) = boxes[t + 1].center();
        let side = config.crop_side(b.width, b.height);
        let crop = |frame: &GrayImage| -> Result<RealTensor3> {
            base_channels(&frame.crop_resized(cx, cy, side, side, px, px)?, &config.features)
        };
        let cells_per_pixel = config.grid_size as f64 / side;
        let sigma = config.sigma_for(b.width, b.height);
        pairs.push(FramePair {
            base: crop(&frames[t])?,
            base_next: crop(&frames[t + 1])?,
            label: config.label(sigma, 0.0, 0.0)?,
            label_next: config.label(sigma, (ny - cy) * cells_per_pixel, (nx - cx) * cells_per_pixel)?,
        });
    }
    Ok(TrainSequence { pairs })
}

/// One frame-pair sample: features under the representor weights at build
/// time and a previous filter rolled forward by the updater.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub z: RealTensor3,
    pub z_next: RealTensor3,
    pub y: RealTensor3,
    pub y_next: RealTensor3,
    pub f_prev: RealTensor3,
    pub base: RealTensor3,
    pub base_next: RealTensor3,
}

/// Per-group multipliers on the learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamScaling {
    pub lambda: f64,
    pub rho: f64,
    pub eta: f64,
    pub mask: f64,
    pub layer: f64,
}

impl Default for ParamScaling {
    fn default() -> Self {
        Self { lambda: 1.0, rho: 1.0, eta: 1.0, mask: 1.0, layer: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub initial_rate: f64,
    pub final_rate: f64,
    pub scaling: ParamScaling,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { batch_size: 16, epochs: 10, initial_rate: 1e-2, final_rate: 1e-5, scaling: ParamScaling::default(), seed: 0 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch size and epochs must be positive"));
        }
        let rates_ok = (self.initial_rate > 0.0 && self.final_rate > 0.0 && self.final_rate <= self.initial_rate)
            || (self.initial_rate == 0.0 && self.final_rate == 0.0);
        if !rates_ok {
            return Err(Error::InvalidArgument("rates must satisfy 0 < final <= initial (or both zero)"));
        }
        Ok(())
    }

    /// `r(e) = r0 * (rT / r0)^(e / T)` with `T = epochs - 1`.
    pub fn rate(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 || self.initial_rate == 0.0 {
            return self.initial_rate;
        }
        let t = (self.epochs - 1) as f64;
        self.initial_rate * math::powf(self.final_rate / self.initial_rate, epoch as f64 / t)
    }
}

/// Which optimization phase a log record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Stagewise,
    Joint,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    /// 1-based stage being trained; 0 during joint finetuning.
    pub stage: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    pub rate: f64,
}

/// `values -= rate * grads`.
pub fn sgd_update(values: &mut [f64], grads: &[f64], rate: f64) {
    for (v, g) in values.iter_mut().zip(grads) {
        *v -= rate * g;
    }
}

fn logit(p: f64) -> f64 {
    math::ln(p / (1.0 - p))
}

/// One SGD step on every stage. `lambda` and `rho` move along their
/// logarithms and `eta` along its logit, so they stay positive and in
/// `[0, 1]`; mask weights move directly. Entries with zero step are left
/// bit-for-bit unchanged.
pub fn sgd_step(params: &UpdaterParams, grads: &[StageGradient], rate: f64, scaling: &ParamScaling) -> Result<UpdaterParams> {
    if grads.len() != params.len() {
        return Err(Error::TapeMismatch { tape: grads.len(), params: params.len() });
    }
    let mut out = params.clone();
    for (stage, g) in out.stages.iter_mut().zip(grads) {
        if g.mask.len() != stage.mask.weights().len() {
            return Err(Error::InvalidArgument("mask gradient length does not match the mask"));
        }
        let step = rate * scaling.lambda * g.lambda * stage.lambda;
        if step != 0.0 {
            stage.lambda = math::exp(math::ln(stage.lambda) - step);
        }
        let step = rate * scaling.rho * g.rho * stage.rho;
        if step != 0.0 {
            stage.rho = math::exp(math::ln(stage.rho) - step);
        }
        let step = rate * scaling.eta * g.eta * stage.eta * (1.0 - stage.eta);
        if step != 0.0 {
            stage.eta = math::sigmoid(logit(stage.eta) - step);
        }
        sgd_update(stage.mask.weights_mut(), &g.mask, rate * scaling.mask);
    }
    out.validate()?;
    Ok(out)
}

pub fn sgd_step_layer(layer: &ConvLayerParams, grad: &ConvGradient, rate: f64, scaling: &ParamScaling) -> ConvLayerParams {
    let mut out = layer.clone();
    sgd_update(&mut out.weights, &grad.weights, rate * scaling.layer);
    sgd_update(&mut out.bias, &grad.bias, rate * scaling.layer);
    out
}

fn features(dataset: &TrainDataset, base: &RealTensor3, layer: Option<&ConvLayerParams>) -> Result<RealTensor3> {
    Ok(apply_layer(base, &dataset.features, layer)?.0)
}

/// Bootstraps `f_t` on each sequence's first frame with the initial stage
/// parameters and rolls it forward with `params`.
pub fn build_samples(dataset: &TrainDataset, params: &UpdaterParams, layer: Option<&ConvLayerParams>) -> Result<Vec<TrainSample>> {
    let init = StageParams::initial(dataset.mask.clone());
    let mut samples = Vec::with_capacity(dataset.pair_count());
    for seq in &dataset.sequences {
        let Some(first) = seq.pairs.first() else { continue };
        let z0 = features(dataset, &first.base, layer)?;
        let mut f = admm_solve(&z0, &first.label, &init, dataset.init_iterations, dataset.init_tolerance)?.f;
        for pair in &seq.pairs {
            let z = features(dataset, &pair.base, layer)?;
            let z_next = features(dataset, &pair.base_next, layer)?;
            let (out, _) = forward(&z, &pair.label, &f, params)?;
            samples.push(TrainSample {
                z,
                z_next,
                y: pair.label.clone(),
                y_next: pair.label_next.clone(),
                f_prev: f,
                base: pair.base.clone(),
                base_next: pair.base_next.clone(),
            });
            f = out.last().clone();
        }
    }
    Ok(samples)
}

/// Mean of `total_loss` over all samples built with `params`.
pub fn mean_total_loss(dataset: &TrainDataset, params: &UpdaterParams, layer: Option<&ConvLayerParams>) -> Result<f64> {
    let samples = build_samples(dataset, params, layer)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument("dataset has no frame pairs"));
    }
    let mut sum = 0.0;
    for s in &samples {
        let (out, _) = forward(&s.z, &s.y, &s.f_prev, params)?;
        sum += total_loss(&out, &s.z_next, &s.y_next)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Averaged minibatch gradients.
struct BatchGradient {
    loss: f64,
    stages: Vec<StageGradient>,
    layer: Option<ConvGradient>,
}

fn batch_gradient(
    dataset: &TrainDataset,
    samples: &[&TrainSample],
    params: &UpdaterParams,
    layer: Option<&ConvLayerParams>,
    weights: &[f64],
    with_layer: bool,
) -> Result<BatchGradient> {
    let scale = 1.0 / samples.len() as f64;
    let mut stages: Vec<StageGradient> = params
        .stages
        .iter()
        .map(|s| StageGradient { lambda: 0.0, rho: 0.0, eta: 0.0, mask: vec![0.0; s.mask.weights().len()] })
        .collect();
    let mut layer_grad = layer.filter(|_| with_layer).map(ConvGradient::zeros);
    let mut loss = 0.0;
    for s in samples {
        let (z, cache) = apply_layer(&s.base, &dataset.features, layer)?;
        let (z_next, cache_next) = apply_layer(&s.base_next, &dataset.features, layer)?;
        let (_, tape) = forward(&z, &s.y, &s.f_prev, params)?;
        let g = backward_weighted(&tape, params, &z_next, &s.y_next, weights)?;
        loss += scale * g.loss;
        for (acc, sg) in stages.iter_mut().zip(&g.stages) {
            acc.lambda += scale * sg.lambda;
            acc.rho += scale * sg.rho;
            acc.eta += scale * sg.eta;
            for (a, b) in acc.mask.iter_mut().zip(&sg.mask) {
                *a += scale * b;
            }
        }
        if let (Some(acc), Some(layer)) = (layer_grad.as_mut(), layer) {
            acc.accumulate(scale, &representor_backward(&g.z, &cache, layer)?);
            acc.accumulate(scale, &representor_backward(&g.z_next, &cache_next, layer)?);
        }
    }
    Ok(BatchGradient { loss, stages, layer: layer_grad })
}

fn epoch_order(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(rng);
    order
}

/// Parameters of a new stage: a copy of the last trained stage, or the
/// initial values with a binary mask for the first one.
pub fn next_stage_init(trained: &[StageParams], mask: &CropOperator) -> StageParams {
    trained.last().cloned().unwrap_or_else(|| StageParams::initial(mask.clone()))
}

/// Greedy training: stage `k` is trained on its own loss `J_k` while stages
/// before it stay frozen. The representor is not updated.
pub fn stagewise_train(
    dataset: &TrainDataset,
    stages: usize,
    cfg: &SgdConfig,
    layer: Option<&ConvLayerParams>,
) -> Result<(UpdaterParams, Vec<EpochRecord>)> {
    cfg.validate()?;
    if stages == 0 {
        return Err(Error::InvalidArgument("need at least one stage"));
    }
    if dataset.pair_count() == 0 {
        return Err(Error::InvalidArgument("dataset has no frame pairs"));
    }
    let mut trained: Vec<StageParams> = Vec::with_capacity(stages);
    let mut log = Vec::new();
    for k in 0..stages {
        let mut all = trained.clone();
        all.push(next_stage_init(&trained, &dataset.mask));
        let mut params = UpdaterParams::new(all)?;
        let mut weights = vec![0.0; k + 1];
        weights[k] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
        for epoch in 0..cfg.epochs {
            let rate = cfg.rate(epoch);
            let samples = build_samples(dataset, &params, layer)?;
            let order = epoch_order(samples.len(), &mut rng);
            let (mut loss_sum, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
                let mut g = batch_gradient(dataset, &batch, &params, layer, &weights, false)?;
                if !g.loss.is_finite() || !g.stages.iter().all(StageGradient::is_finite) {
                    return Err(Error::Divergence { stage: k + 1, epoch });
                }
                // frozen stages get no update
                for frozen in &mut g.stages[..k] {
                    *frozen = StageGradient { lambda: 0.0, rho: 0.0, eta: 0.0, mask: vec![0.0; frozen.mask.len()] };
                }
                params = sgd_step(&params, &g.stages, rate, &cfg.scaling)?;
                loss_sum += g.loss;
                batches += 1;
            }
            log.push(EpochRecord { epoch, phase: Phase::Stagewise, stage: k + 1, loss: loss_sum / batches as f64, rate });
        }
        trained = params.stages;
    }
    Ok((UpdaterParams::new(trained)?, log))
}

/// Joint optimization of all stages and the representor weights on the
/// total loss.
pub fn joint_finetune(
    dataset: &TrainDataset,
    params: &UpdaterParams,
    layer: Option<&ConvLayerParams>,
    cfg: &SgdConfig,
) -> Result<(UpdaterParams, Option<ConvLayerParams>, Vec<EpochRecord>)> {
    cfg.validate()?;
    params.validate()?;
    if dataset.pair_count() == 0 {
        return Err(Error::InvalidArgument("dataset has no frame pairs"));
    }
    let mut params = params.clone();
    let mut layer = layer.cloned();
    let weights = vec![1.0; params.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x10_1e57));
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        let rate = cfg.rate(epoch);
        let samples = build_samples(dataset, &params, layer.as_ref())?;
        let order = epoch_order(samples.len(), &mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let g = batch_gradient(dataset, &batch, &params, layer.as_ref(), &weights, true)?;
            let layer_ok = g.layer.as_ref().is_none_or(ConvGradient::is_finite);
            if !g.loss.is_finite() || !g.stages.iter().all(StageGradient::is_finite) || !layer_ok {
                return Err(Error::Divergence { stage: 0, epoch });
            }
            params = sgd_step(&params, &g.stages, rate, &cfg.scaling)?;
            if let (Some(l), Some(lg)) = (layer.as_mut(), g.layer.as_ref()) {
                *l = sgd_step_layer(l, lg, rate, &cfg.scaling);
            }
            loss_sum += g.loss;
            batches += 1;
        }
        log.push(EpochRecord { epoch, phase: Phase::Joint, stage: 0, loss: loss_sum / batches as f64, rate });
    }
    Ok((params, layer, log))
}
