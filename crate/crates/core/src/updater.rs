//! The truncated-inference updater: `K` unrolled ADMM stages with their own
//! parameters, each followed by interpolation against the previous filter.

use alloc::vec::Vec;

use crate::bacf::{admm_step, FilterVars, FrequencySolver, StageParams};
use crate::error::{Error, Result};
use crate::signal::Correlator;
use crate::tensor::{ensure_shape, RealTensor3};

/// Parameters of all stages, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdaterParams {
    pub stages: Vec<StageParams>,
}

impl UpdaterParams {
    pub fn new(stages: Vec<StageParams>) -> Result<Self> {
        let params = Self { stages };
        params.validate()?;
        Ok(params)
    }

    /// `count` copies of the same stage.
    pub fn repeated(stage: StageParams, count: usize) -> Result<Self> {
        Self::new(core::iter::repeat_n(stage, count).collect())
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// The first `k` stages.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.stages.len() {
            return Err(Error::InvalidArgument("prefix length out of range"));
        }
        Ok(Self { stages: self.stages[..k].to_vec() })
    }

    pub fn validate(&self) -> Result<()> {
        let first = self.stages.first().ok_or(Error::InvalidArgument("updater needs at least one stage"))?;
        for stage in &self.stages {
            stage.validate()?;
            if !stage.mask.same_geometry(&first.mask) {
                return Err(Error::InvalidArgument("all stages must share one crop geometry"));
            }
        }
        Ok(())
    }
}

/// Interpolated filters `f_{t+1}^{(k)}` for `k = 1..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    pub filters: Vec<RealTensor3>,
}

impl StageOutputs {
    /// The adapted filter handed to the next frame, `f_{t+1}^{(K)}`.
    pub fn last(&self) -> &RealTensor3 {
        self.filters.last().expect("updater always produces at least one stage")
    }
}

/// Everything the reverse pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct UpdaterTape {
    pub z: RealTensor3,
    pub y: RealTensor3,
    pub f_prev: RealTensor3,
    /// ADMM variables after each stage (`f^{(k)}, h^{(k)}, g^{(k)}`).
    pub stages: Vec<FilterVars>,
    /// Feature and label spectra of the current frame.
    pub solver: FrequencySolver,
}

impl UpdaterTape {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    /// ADMM variables entering stage `k` (0-based); zeros for the first.
    pub fn input_vars(&self, k: usize, params: &UpdaterParams) -> FilterVars {
        if k == 0 {
            FilterVars::zeros(&params.stages[0].mask, self.z.shape().channels)
        } else {
            self.stages[k - 1].clone()
        }
    }
}

/// Runs the `K` stages from `f^{(0)} = g^{(0)} = 0` on the current frame's
/// features `z` and label `y`, interpolating every stage against `f_prev`.
pub fn forward(
    z: &RealTensor3,
    y: &RealTensor3,
    f_prev: &RealTensor3,
    params: &UpdaterParams,
) -> Result<(StageOutputs, UpdaterTape)> {
    params.validate()?;
    let channels = z.shape().channels;
    let mask = &params.stages[0].mask;
    ensure_shape(mask.full_shape(channels), z.shape())?;
    ensure_shape(z.shape(), f_prev.shape())?;
    let solver = FrequencySolver::new(z, y)?;

    let mut vars = FilterVars::zeros(mask, channels);
    let mut stages = Vec::with_capacity(params.len());
    let mut filters = Vec::with_capacity(params.len());
    for stage in &params.stages {
        vars = admm_step(&solver, &vars, stage)?;
        filters.push(crate::bacf::interpolate(f_prev, &vars.f, stage.eta)?);
        stages.push(vars.clone());
    }
    let tape = UpdaterTape { z: z.clone(), y: y.clone(), f_prev: f_prev.clone(), stages, solver };
    Ok((StageOutputs { filters }, tape))
}

/// `J = ||y_next - sum_l z_next,l * f_l||^2` (no one-half factor).
pub fn stage_loss(filter: &RealTensor3, z_next: &RealTensor3, y_next: &RealTensor3) -> Result<f64> {
    stage_loss_with(&Correlator::new(z_next), filter, y_next)
}

pub(crate) fn stage_loss_with(corr: &Correlator, filter: &RealTensor3, y_next: &RealTensor3) -> Result<f64> {
    let response = corr.response(filter)?;
    Ok(y_next.sub(&response)?.norm_sqr())
}

/// Sum of the stage losses over all stages.
pub fn total_loss(outputs: &StageOutputs, z_next: &RealTensor3, y_next: &RealTensor3) -> Result<f64> {
    let corr = Correlator::new(z_next);
    outputs.filters.iter().map(|f| stage_loss_with(&corr, f, y_next)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bacf::{admm_solve, apply_crop_adjoint, f_update, g_update, h_update, interpolate, CropOperator};
    use crate::fft::fft2_per_channel;
    use crate::signal::cross_correlate;
    use crate::tensor::Shape3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Shape3, rng: &mut ChaCha8Rng) -> RealTensor3 {
        RealTensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_stage(rng: &mut ChaCha8Rng, mask: &CropOperator) -> StageParams {
        let weights = mask.weights().iter().map(|_| rng.random_range(0.3..1.4)).collect();
        StageParams {
            lambda: rng.random_range(0.2..2.0),
            rho: rng.random_range(0.2..2.0),
            eta: rng.random_range(0.0..1.0),
            mask: mask.clone().with_weights(weights).unwrap(),
        }
    }

    #[test]
    fn equal_stages_reproduce_truncated_admm() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mask = CropOperator::centered(8, 8, 3, 4).unwrap();
        let z = random_tensor(mask.full_shape(2), &mut rng);
        let y = random_tensor(mask.full_shape(1), &mut rng);
        let f_prev = random_tensor(mask.full_shape(2), &mut rng);
        let stage = random_stage(&mut rng, &mask);
        for k in 1..=4 {
            let params = UpdaterParams::repeated(stage.clone(), k).unwrap();
            let (_, tape) = forward(&z, &y, &f_prev, &params).unwrap();
            let admm = admm_solve(&z, &y, &stage, k, f64::MIN_POSITIVE).unwrap();
            assert_eq!(tape.stages[k - 1].f, admm.f);
        }
    }

    #[test]
    fn zero_rates_keep_previous_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mask = CropOperator::centered(6, 6, 2, 2).unwrap();
        let z = random_tensor(mask.full_shape(2), &mut rng);
        let y = random_tensor(mask.full_shape(1), &mut rng);
        let f_prev = random_tensor(mask.full_shape(2), &mut rng);
        let stages = (0..3).map(|_| StageParams { eta: 0.0, ..random_stage(&mut rng, &mask) }).collect();
        let (out, _) = forward(&z, &y, &f_prev, &UpdaterParams::new(stages).unwrap()).unwrap();
        assert!(out.filters.iter().all(|f| *f == f_prev));
    }

    #[test]
    fn two_stages_match_hand_sequenced_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mask = CropOperator::centered(6, 5, 3, 2).unwrap();
        let z = random_tensor(mask.full_shape(2), &mut rng);
        let y = random_tensor(mask.full_shape(1), &mut rng);
        let f_prev = random_tensor(mask.full_shape(2), &mut rng);
        let params = UpdaterParams::new(vec![random_stage(&mut rng, &mask), random_stage(&mut rng, &mask)]).unwrap();
        let (out, _) = forward(&z, &y, &f_prev, &params).unwrap();

        let y_hat = fft2_per_channel(&y);
        let mut vars = FilterVars::zeros(&mask, 2);
        for (k, p) in params.stages.iter().enumerate() {
            let h = h_update(&vars, p).unwrap();
            let g = g_update(&vars, &h, &p.mask).unwrap();
            let f = f_update(&z, &y_hat, &vars, &h, &g, p).unwrap();
            vars = FilterVars { f, h, g };
            let expect = interpolate(&f_prev, &vars.f, p.eta).unwrap();
            assert!(out.filters[k].sub(&expect).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn prefix_property_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mask = CropOperator::centered(6, 6, 2, 3).unwrap();
        let z = random_tensor(mask.full_shape(3), &mut rng);
        let y = random_tensor(mask.full_shape(1), &mut rng);
        let f_prev = random_tensor(mask.full_shape(3), &mut rng);
        let stages: Vec<_> = (0..3).map(|_| random_stage(&mut rng, &mask)).collect();
        let full = UpdaterParams::new(stages).unwrap();
        let (out3, tape3) = forward(&z, &y, &f_prev, &full).unwrap();
        let (again, tape_again) = forward(&z, &y, &f_prev, &full).unwrap();
        assert_eq!(out3, again);
        assert_eq!(tape3.stages, tape_again.stages);
        for k in 1..3 {
            let (outk, _) = forward(&z, &y, &f_prev, &full.prefix(k).unwrap()).unwrap();
            assert_eq!(outk.filters[..], out3.filters[..k]);
        }
    }

    #[test]
    fn losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let shape = Shape3::new(5, 4, 2);
        let z = random_tensor(shape, &mut rng);
        let f = random_tensor(shape, &mut rng);
        let perfect = cross_correlate(&z, &f).unwrap();
        assert!(stage_loss(&f, &z, &perfect).unwrap() < 1e-24);

        let y = random_tensor(shape.with_channels(1), &mut rng);
        assert!((stage_loss(&RealTensor3::zeros(shape), &z, &y).unwrap() - y.norm_sqr()).abs() < 1e-15);

        let naive = bacf_oracles::spatial::data_term(z.as_slice(), f.as_slice(), y.as_slice(), 5, 4, 2) * 2.0;
        assert!((stage_loss(&f, &z, &y).unwrap() - naive).abs() < 1e-10);

        let filters: Vec<_> = (0..3).map(|_| random_tensor(shape, &mut rng)).collect();
        let outputs = StageOutputs { filters: filters.clone() };
        let explicit: f64 = filters.iter().map(|f| stage_loss(f, &z, &y).unwrap()).sum();
        assert!((total_loss(&outputs, &z, &y).unwrap() - explicit).abs() < 1e-12);
        let single = StageOutputs { filters: vec![filters[0].clone()] };
        assert_eq!(total_loss(&single, &z, &y).unwrap(), stage_loss(&filters[0], &z, &y).unwrap());
        let perfect_all = StageOutputs { filters: vec![f.clone(), f] };
        assert!(total_loss(&perfect_all, &z, &perfect).unwrap() < 1e-24);
    }

    #[test]
    fn rejects_inconsistent_inputs() {
        let mask = CropOperator::centered(6, 6, 2, 2).unwrap();
        let other = CropOperator::centered(6, 6, 3, 3).unwrap();
        assert!(UpdaterParams::new(vec![]).is_err());
        assert!(UpdaterParams::new(vec![StageParams::initial(mask.clone()), StageParams::initial(other)]).is_err());
        let params = UpdaterParams::repeated(StageParams::initial(mask.clone()), 2).unwrap();
        let z = RealTensor3::zeros(mask.full_shape(2));
        let y = RealTensor3::zeros(mask.full_shape(1));
        assert!(forward(&z, &y, &RealTensor3::zeros(mask.full_shape(1)), &params).is_err());
        let _ = apply_crop_adjoint;
    }
}
