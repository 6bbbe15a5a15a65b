//! Synthetic tracking sequences: a textured rectangle moving over a textured
//! background, with exact ground truth.

use std::f64::consts::TAU;
use std::path::Path;

use bacf_unroll::{BoundingBox, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{HarnessError, Result};
use crate::otb::{self, SequenceDataset};

/// Box coordinates are snapped to this grid so that they survive the
/// 1-indexed text round trip exactly.
const COORD_QUANTUM: f64 = 256.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub target_width: f64,
    pub target_height: f64,
    /// Target center in the first frame.
    pub start_x: f64,
    pub start_y: f64,
    /// Pixels per frame.
    pub velocity_x: f64,
    pub velocity_y: f64,
    /// Background translation in pixels per frame (camera pan).
    pub background_velocity_x: f64,
    pub background_velocity_y: f64,
    /// Per-frame multiplicative size change.
    pub scale_drift: f64,
    /// Standard deviation of additive Gaussian noise on [0, 1] intensities.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            frames: 20,
            target_width: 24.0,
            target_height: 24.0,
            start_x: 128.0,
            start_y: 128.0,
            velocity_x: 0.0,
            velocity_y: 0.0,
            background_velocity_x: 0.0,
            background_velocity_y: 0.0,
            scale_drift: 1.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub frames: Vec<GrayImage>,
    pub boxes: Vec<BoundingBox>,
}

impl SynthSequence {
    pub fn write(&self, dir: &Path) -> Result<SequenceDataset> {
        otb::write_otb_sequence(dir, &self.frames, &self.boxes)
    }
}

fn snap(v: f64) -> f64 {
    (v * COORD_QUANTUM).round() / COORD_QUANTUM
}

impl SynthSpec {
    /// Ground-truth box of every frame.
    pub fn boxes(&self) -> Result<Vec<BoundingBox>> {
        if self.width == 0 || self.height == 0 || self.frames == 0 {
            return Err(HarnessError::Invalid("synthetic frames need a positive size and count".into()));
        }
        if !(self.scale_drift > 0.0) || !(self.noise_std >= 0.0) {
            return Err(HarnessError::Invalid("scale drift must be positive and noise non-negative".into()));
        }
        (0..self.frames)
            .map(|t| {
                let s = self.scale_drift.powi(t as i32);
                let w = snap(self.target_width * s);
                let h = snap(self.target_height * s);
                let cx = self.start_x + self.velocity_x * t as f64;
                let cy = self.start_y + self.velocity_y * t as f64;
                let b = BoundingBox::new(snap(cx - w / 2.0), snap(cy - h / 2.0), w, h)?;
                if b.x < 0.0 || b.y < 0.0 || b.x + b.width > self.width as f64 || b.y + b.height > self.height as f64 {
                    return Err(HarnessError::Invalid(format!("target leaves the frame at frame {t}")));
                }
                Ok(b)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
struct Texture {
    offset: f64,
    waves: Vec<Wave>,
}

impl Texture {
    /// `count` plane waves with frequencies (cycles per unit) in `band`.
    fn random(rng: &mut ChaCha8Rng, offset: f64, count: usize, band: (f64, f64), amplitude: f64) -> Self {
        let waves = (0..count)
            .map(|_| {
                let angle = rng.random_range(0.0..TAU);
                let freq = rng.random_range(band.0..band.1);
                Wave {
                    fx: freq * angle.cos(),
                    fy: freq * angle.sin(),
                    phase: rng.random_range(0.0..TAU),
                    amplitude: amplitude * rng.random_range(0.5..1.0),
                }
            })
            .collect();
        Self { offset, waves }
    }

    fn eval(&self, u: f64, v: f64) -> f64 {
        self.offset + self.waves.iter().map(|w| w.amplitude * (TAU * (w.fx * u + w.fy * v) + w.phase).sin()).sum::<f64>()
    }
}

/// Renders the sequence. Intensities are quantized to 8 bits so the frames
/// equal what a PNG round trip returns.
pub fn synth_sequence_gen(spec: &SynthSpec) -> Result<SynthSequence> {
    let boxes = spec.boxes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let background = Texture::random(&mut rng, 0.45, 12, (0.02, 0.12), 0.08);
    let target_offset = if rng.random_bool(0.5) { 0.7 } else { 0.2 };
    let target = Texture::random(&mut rng, target_offset, 8, (1.0, 4.0), 0.1);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| HarnessError::Invalid(e.to_string()))?;
    let frames = boxes
        .iter()
        .enumerate()
        .map(|(t, b)| {
            let (bx, by) = (spec.background_velocity_x * t as f64, spec.background_velocity_y * t as f64);
            GrayImage::from_fn(spec.width, spec.height, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = px >= b.x && px < b.x + b.width && py >= b.y && py < b.y + b.height;
                let mut v = if inside {
                    target.eval((px - b.x) / b.width, (py - b.y) / b.height)
                } else {
                    background.eval(px - bx, py - by)
                };
                if spec.noise_std > 0.0 {
                    v += noise.sample(&mut rng);
                }
                otb::quantize(v) as f64 / 255.0
            })
        })
        .collect();
    Ok(SynthSequence { frames, boxes })
}

/// Kinds of motion used by the generated suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    Static,
    /// Fixed speed in pixels per frame, random direction.
    ConstantSpeed(f64),
    /// Speed drawn uniformly from `[0, max]`, random direction.
    RandomSpeed(f64),
}

/// Optional camera pan for generated suites: background speed drawn
/// uniformly from `[0, max]` in a random direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pan {
    pub max_speed: f64,
}

/// Preferred clearance between the target and the frame border, in target
/// sizes, so that tracking crops rarely need edge replication.
pub const SUITE_MARGIN: f64 = 2.5;

/// `count` specs derived from `base` with random start, direction and
/// texture seeds. The start keeps the target in the frame, and
/// `SUITE_MARGIN` target sizes away from the border where the frame allows.
pub fn suite_specs(base: &SynthSpec, count: usize, motion: Motion, pan: Pan, seed: u64) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let speed = match motion {
                Motion::Static => 0.0,
                Motion::ConstantSpeed(s) => s,
                Motion::RandomSpeed(max) => rng.random_range(0.0..=max),
            };
            let angle = rng.random_range(0.0..TAU);
            let (vx, vy) = (speed * angle.cos(), speed * angle.sin());
            let travel = |v: f64| v * (base.frames.saturating_sub(1)) as f64;
            let place = |rng: &mut ChaCha8Rng, extent: usize, size: f64, v: f64| {
                let range = |half: f64| {
                    let (a, b) = (half, extent as f64 - half);
                    (a.max(a - travel(v)), b.min(b - travel(v)))
                };
                let (mut lo, mut hi) = range(size / 2.0 + SUITE_MARGIN * size);
                if hi <= lo {
                    (lo, hi) = range(size / 2.0 + 1.0);
                }
                if hi > lo { rng.random_range(lo..hi) } else { extent as f64 / 2.0 }
            };
            let drift_max = base.scale_drift.max(1.0).powi(base.frames as i32);
            let start_x = place(&mut rng, base.width, base.target_width * drift_max, vx);
            let start_y = place(&mut rng, base.height, base.target_height * drift_max, vy);
            let (pan_speed, pan_angle) = (rng.random_range(0.0..=pan.max_speed), rng.random_range(0.0..TAU));
            SynthSpec {
                start_x,
                start_y,
                velocity_x: vx,
                velocity_y: vy,
                background_velocity_x: pan_speed * pan_angle.cos(),
                background_velocity_y: pan_speed * pan_angle.sin(),
                seed: rng.random(),
                ..base.clone()
            }
        })
        .collect()
}

pub fn synth_suite(base: &SynthSpec, count: usize, motion: Motion, pan: Pan, seed: u64) -> Result<Vec<SynthSequence>> {
    suite_specs(base, count, motion, pan, seed).iter().map(synth_sequence_gen).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_noiseless_frames_are_identical() {
        let seq = synth_sequence_gen(&SynthSpec { frames: 4, ..SynthSpec::default() }).unwrap();
        assert!(seq.frames.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn velocity_gives_arithmetic_boxes() {
        let spec = SynthSpec { velocity_x: 2.0, start_x: 30.0, ..SynthSpec::default() };
        let boxes = spec.boxes().unwrap();
        for w in boxes.windows(2) {
            assert_eq!(w[1].x - w[0].x, 2.0);
            assert_eq!(w[1].y, w[0].y);
        }
    }

    #[test]
    fn leaving_the_frame_is_an_error() {
        let spec = SynthSpec { velocity_x: 8.0, ..SynthSpec::default() };
        assert!(synth_sequence_gen(&spec).is_err());
    }

    #[test]
    fn suites_keep_targets_inside() {
        let base = SynthSpec { scale_drift: 1.005, ..SynthSpec::default() };
        for motion in [Motion::Static, Motion::ConstantSpeed(2.0), Motion::RandomSpeed(3.0)] {
            for spec in suite_specs(&base, 20, motion, Pan { max_speed: 1.0 }, 3) {
                spec.boxes().unwrap();
            }
        }
    }

    #[test]
    fn target_differs_from_background() {
        let spec = SynthSpec::default();
        let seq = synth_sequence_gen(&spec).unwrap();
        let f = &seq.frames[0];
        assert_ne!(f.get(128, 128), f.get(5, 5));
    }
}
