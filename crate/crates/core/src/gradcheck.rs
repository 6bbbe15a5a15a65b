//! Central-difference checks of the reverse pass on random instances.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bacf::{CropOperator, StageParams};
use crate::error::{Error, Result};
use crate::grad::backward;
use crate::representor::{apply_layer, representor_backward, ConvGradient, ConvLayerParams, FeatureConfig, FeatureRecipe};
use crate::signal::gaussian_label;
use crate::tensor::{RealTensor3, Shape3};
use crate::updater::{forward, total_loss, UpdaterParams};

/// Absolute error below which an entry always passes.
pub const ABSOLUTE_FLOOR: f64 = 1e-7;

/// Description of a random instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckSetup {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub stages: usize,
    pub seed: u64,
    /// Draw non-binary mask weights instead of the all-ones mask.
    pub random_masks: bool,
    /// Produce `z_t`, `z_{t+1}` through a learnable layer and check `W_F` too.
    pub with_representor: bool,
    /// Entries sampled from each tensor input.
    pub tensor_samples: usize,
}

impl Default for GradCheckSetup {
    fn default() -> Self {
        Self {
            height: 6,
            width: 6,
            channels: 2,
            crop_height: 3,
            crop_width: 3,
            stages: 2,
            seed: 0,
            random_masks: true,
            with_representor: true,
            tensor_samples: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    /// `|a - n| / max(|a|, |n|, floor / tol)`; at most `tol` iff the entry passes.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub step: f64,
    pub tol: f64,
    pub max_error: f64,
    pub passed: bool,
    /// Set when the instance could not be evaluated at all.
    pub failure: Option<Error>,
}

impl GradCheckReport {
    /// `name,analytic,numeric,error` rows preceded by a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,analytic,numeric,error\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", e.name, e.analytic, e.numeric, e.error));
        }
        out
    }

    pub fn summary(&self) -> String {
        match &self.failure {
            Some(err) => format!("gradcheck failed to run: {err}"),
            None => format!(
                "checked {} entries, max error {:.3e} (tol {:.1e}): {}",
                self.entries.len(),
                self.max_error,
                self.tol,
                if self.passed { "pass" } else { "FAIL" }
            ),
        }
    }
}

/// Scaled error used by the report; see [`GradCheckEntry::error`].
pub fn scaled_error(analytic: f64, numeric: f64, tol: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABSOLUTE_FLOOR / tol);
    (analytic - numeric).abs() / scale
}

/// `(f(x + step e_i) - f(x - step e_i)) / (2 step)`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], index: usize, step: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[index] = x[index] + step;
    let plus = f(&probe);
    probe[index] = x[index] - step;
    let minus = f(&probe);
    (plus - minus) / (2.0 * step)
}

/// Every differentiable input of one instance, flattened.
#[derive(Debug, Clone)]
struct Instance {
    params: UpdaterParams,
    base: RealTensor3,
    base_next: RealTensor3,
    /// `z_t`, `z_{t+1}` directly when there is no representor.
    z: RealTensor3,
    z_next: RealTensor3,
    y: RealTensor3,
    y_next: RealTensor3,
    f_prev: RealTensor3,
    layer: Option<ConvLayerParams>,
    cfg: FeatureConfig,
}

impl Instance {
    fn generate(setup: &GradCheckSetup) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let shape = Shape3::new(setup.height, setup.width, setup.channels);
        let mask = CropOperator::centered(setup.height, setup.width, setup.crop_height, setup.crop_width)?;
        let stages = (0..setup.stages)
            .map(|_| {
                let weights = if setup.random_masks {
                    mask.weights().iter().map(|_| rng.random_range(0.3..1.5)).collect()
                } else {
                    mask.weights().to_vec()
                };
                Ok(StageParams {
                    lambda: rng.random_range(0.3..1.5),
                    rho: rng.random_range(0.3..1.5),
                    eta: rng.random_range(0.1..0.9),
                    mask: mask.clone().with_weights(weights)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let params = UpdaterParams::new(stages)?;
        let random = |rng: &mut ChaCha8Rng, s: Shape3| RealTensor3::from_fn(s, |_, _, _| rng.random_range(-1.0..1.0));
        let y = gaussian_label(setup.height, setup.width, (setup.height / 2) as f64, (setup.width / 2) as f64, 1.0)?;
        let y_next = gaussian_label(setup.height, setup.width, (setup.height / 2) as f64 + 0.7, (setup.width / 2) as f64 - 0.4, 1.0)?;
        let f_prev = random(&mut rng, shape).scaled(0.3);
        let cfg = FeatureConfig {
            cell_size: 1,
            recipe: FeatureRecipe::Gray,
            learnable: true,
            kernel_size: 3,
            out_channels: setup.channels,
            window_features: true,
        };
        let mut inst = Self {
            params,
            base: random(&mut rng, shape.with_channels(1)),
            base_next: random(&mut rng, shape.with_channels(1)),
            z: random(&mut rng, shape),
            z_next: random(&mut rng, shape),
            y,
            y_next,
            f_prev,
            layer: None,
            cfg,
        };
        if setup.with_representor {
            // redraw until no pre-activation sits within reach of the kink
            loop {
                let mut layer = ConvLayerParams::random(3, 1, setup.channels, 0.8, rng.random())?;
                layer.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.2..0.4));
                let near_kink = [&inst.base, &inst.base_next].iter().any(|base| {
                    apply_layer(base, &inst.cfg, Some(&layer))
                        .map(|(_, c)| c.pre_activation.unwrap().as_slice().iter().any(|v| v.abs() < 2e-3))
                        .unwrap_or(true)
                });
                if !near_kink {
                    inst.layer = Some(layer);
                    inst.z = RealTensor3::zeros(shape);
                    inst.z_next = RealTensor3::zeros(shape);
                    break;
                }
                inst.base = random(&mut rng, shape.with_channels(1));
                inst.base_next = random(&mut rng, shape.with_channels(1));
            }
        }
        Ok(inst)
    }

    fn features(&self) -> Result<(RealTensor3, RealTensor3)> {
        match &self.layer {
            // `z`, `z_next` act as (zero) offsets on the layer output so the
            // feature gradients are probed as well
            Some(layer) => Ok((
                apply_layer(&self.base, &self.cfg, Some(layer))?.0.add(&self.z)?,
                apply_layer(&self.base_next, &self.cfg, Some(layer))?.0.add(&self.z_next)?,
            )),
            None => Ok((self.z.clone(), self.z_next.clone())),
        }
    }

    fn loss(&self) -> f64 {
        let eval = || -> Result<f64> {
            let (z, z_next) = self.features()?;
            let (out, _) = forward(&z, &self.y, &self.f_prev, &self.params)?;
            total_loss(&out, &z_next, &self.y_next)
        };
        eval().unwrap_or(f64::NAN)
    }
}

/// Perturbs every stage scalar, every mask entry, every `W_F` entry and a
/// random subset of `z_t`, `z_{t+1}`, `f_t` entries; compares against the
/// analytic reverse pass.
pub fn finite_diff_check(setup: &GradCheckSetup, step: f64, tol: f64) -> GradCheckReport {
    match run_check(setup, step, tol) {
        Ok(entries) => {
            let max_error = entries.iter().map(|e| e.error).fold(0.0, f64::max);
            let passed = entries.iter().all(|e| e.error <= tol);
            GradCheckReport { entries, step, tol, max_error, passed, failure: None }
        }
        Err(err) => GradCheckReport {
            entries: Vec::new(),
            step,
            tol,
            max_error: f64::INFINITY,
            passed: false,
            failure: Some(err),
        },
    }
}

fn run_check(setup: &GradCheckSetup, step: f64, tol: f64) -> Result<Vec<GradCheckEntry>> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive"));
    }
    let inst = Instance::generate(setup)?;
    let (z, z_next) = inst.features()?;
    let (_, tape) = forward(&z, &inst.y, &inst.f_prev, &inst.params)?;
    let grads = backward(&tape, &inst.params, &z_next, &inst.y_next)?;

    let mut entries = Vec::new();
    let mut push = |name: String, analytic: f64, numeric: f64| {
        entries.push(GradCheckEntry { name, analytic, numeric, error: scaled_error(analytic, numeric, tol) });
    };

    let mut probe = |inst: &Instance, get: &dyn Fn(&mut Instance) -> &mut f64| {
        let mut work = inst.clone();
        let x0 = *get(&mut work);
        central_difference(
            |x| {
                *get(&mut work) = x[0];
                work.loss()
            },
            &[x0],
            0,
            step,
        )
    };

    for (k, g) in grads.stages.iter().enumerate() {
        let n = format!("stage{}", k + 1);
        push(format!("{n}.lambda"), g.lambda, probe(&inst, &|i| &mut i.params.stages[k].lambda));
        push(format!("{n}.rho"), g.rho, probe(&inst, &|i| &mut i.params.stages[k].rho));
        push(format!("{n}.eta"), g.eta, probe(&inst, &|i| &mut i.params.stages[k].eta));
        for (d, &gw) in g.mask.iter().enumerate() {
            push(format!("{n}.mask[{d}]"), gw, probe(&inst, &|i| &mut i.params.stages[k].mask.weights_mut()[d]));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed ^ 0x5eed);
    let mut pick = |len: usize| -> Vec<usize> {
        let mut idx = sample(&mut rng, len, setup.tensor_samples.min(len)).into_vec();
        idx.sort_unstable();
        idx
    };

    for i in pick(inst.f_prev.len()) {
        push(format!("f_t[{i}]"), grads.f_prev.as_slice()[i], probe(&inst, &|w| &mut w.f_prev.as_mut_slice()[i]));
    }

    for i in pick(z.len()) {
        push(format!("z_t[{i}]"), grads.z.as_slice()[i], probe(&inst, &|w| &mut w.z.as_mut_slice()[i]));
    }
    for i in pick(z_next.len()) {
        push(format!("z_next[{i}]"), grads.z_next.as_slice()[i], probe(&inst, &|w| &mut w.z_next.as_mut_slice()[i]));
    }
    if let Some(layer) = &inst.layer {
        let (_, cache) = apply_layer(&inst.base, &inst.cfg, Some(layer))?;
        let (_, cache_next) = apply_layer(&inst.base_next, &inst.cfg, Some(layer))?;
        let mut dw = representor_backward(&grads.z, &cache, layer)?;
        dw.accumulate(1.0, &representor_backward(&grads.z_next, &cache_next, layer)?);
        push_layer_entries(&inst, &dw, &mut push, &mut probe);
    }
    Ok(entries)
}

fn push_layer_entries(
    inst: &Instance,
    dw: &ConvGradient,
    push: &mut impl FnMut(String, f64, f64),
    probe: &mut impl FnMut(&Instance, &dyn Fn(&mut Instance) -> &mut f64) -> f64,
) {
    for (i, &g) in dw.weights.iter().enumerate() {
        push(format!("W_F[{i}]"), g, probe(inst, &|w| &mut w.layer.as_mut().unwrap().weights[i]));
    }
    for (i, &g) in dw.bias.iter().enumerate() {
        push(format!("bias[{i}]"), g, probe(inst, &|w| &mut w.layer.as_mut().unwrap().bias[i]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_probe_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let c: Vec<f64> = (0..72).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f_t: Vec<f64> = (0..72).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64]| x.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        for (i, ci) in c.iter().enumerate() {
            let numeric = central_difference(loss, &f_t, i, 1e-4);
            assert!((numeric - ci).abs() < 1e-10);
        }
    }

    #[test]
    fn single_stage_passes() {
        let setup = GradCheckSetup { stages: 1, random_masks: false, with_representor: false, seed: 1, ..Default::default() };
        let report = finite_diff_check(&setup, 1e-4, 1e-4);
        assert!(report.passed, "{}", report.summary());
        assert!(report.entries.len() >= 64 + 3);
    }

    #[test]
    fn three_stages_random_masks_pass() {
        let setup = GradCheckSetup { stages: 3, seed: 2, with_representor: false, ..Default::default() };
        let report = finite_diff_check(&setup, 1e-4, 1e-4);
        assert!(report.passed, "{}", report.summary());
    }

    #[test]
    fn representor_weights_pass() {
        let setup = GradCheckSetup { seed: 3, ..Default::default() };
        let report = finite_diff_check(&setup, 1e-4, 1e-4);
        assert!(report.passed, "{}", report.summary());
        assert!(report.entries.iter().any(|e| e.name.starts_with("W_F")));
    }

    #[test]
    fn invalid_step_still_reports() {
        let report = finite_diff_check(&GradCheckSetup::default(), 0.0, 1e-4);
        assert!(!report.passed && report.failure.is_some());
        assert!(report.to_csv().starts_with("name,"));
    }
}
