//! One-pass evaluation: success curve over overlap thresholds and precision
//! curve over center-error thresholds.

use bacf_unroll::BoundingBox;

use crate::error::{HarnessError, Result};

pub const OVERLAP_STEPS: usize = 20;
pub const MAX_CENTER_ERROR: usize = 50;
pub const PRECISION_RADIUS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub overlap_thresholds: Vec<f64>,
    pub success: Vec<f64>,
    pub auc: f64,
    pub distance_thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub precision_at_20: f64,
    pub mean_iou: f64,
    pub frames: usize,
}

pub fn overlap_thresholds() -> Vec<f64> {
    (0..=OVERLAP_STEPS).map(|i| i as f64 / OVERLAP_STEPS as f64).collect()
}

pub fn distance_thresholds() -> Vec<f64> {
    (0..=MAX_CENTER_ERROR).map(|d| d as f64).collect()
}

pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

/// A frame counts as a success at `tau` when its overlap is positive and at
/// least `tau`, so a perfect track scores 1 at every threshold and a lost
/// one scores 0 everywhere.
pub fn eval_metrics(predicted: &[BoundingBox], truth: &[BoundingBox]) -> Result<MetricsReport> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "need equal non-empty box lists, got {} predicted and {} truth",
            predicted.len(),
            truth.len()
        )));
    }
    let n = truth.len() as f64;
    let ious: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| p.iou(t)).collect();
    let errors: Vec<f64> = predicted.iter().zip(truth).map(|(p, t)| center_error(p, t)).collect();
    let overlap_thresholds = overlap_thresholds();
    let success: Vec<f64> = overlap_thresholds
        .iter()
        .map(|&tau| ious.iter().filter(|&&v| v > 0.0 && v >= tau).count() as f64 / n)
        .collect();
    let distance_thresholds = distance_thresholds();
    let precision: Vec<f64> =
        distance_thresholds.iter().map(|&d| errors.iter().filter(|&&e| e <= d).count() as f64 / n).collect();
    Ok(MetricsReport {
        auc: success.iter().sum::<f64>() / success.len() as f64,
        precision_at_20: precision[PRECISION_RADIUS],
        mean_iou: ious.iter().sum::<f64>() / n,
        frames: truth.len(),
        overlap_thresholds,
        success,
        distance_thresholds,
        precision,
    })
}
