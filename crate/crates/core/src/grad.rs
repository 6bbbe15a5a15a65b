//! Reverse pass through the unrolled stages.
//!
//! Each primitive has a hand-written vector-Jacobian product:
//!
//! * interpolation `out = (1 - eta) f_t + eta f`;
//! * the `f` solve `H f = C^T y + rho p` with `H = C^T C + rho I`,
//!   differentiated implicitly: for an upstream `fbar`, `q = H^{-1} fbar`
//!   gives `pbar = rho q`, `rhobar = <q, p - f>` and
//!   `zbar_l = e * q_l - (C q) * f_l` with `e = y - C f`;
//! * the prox target `p = M^T h - g`;
//! * the dual step `g' = g + f - M^T h`;
//! * the elementwise `h` step `h = rho w s / (lambda + rho w^2)`,
//!   `s = crop(f + g)`.
//!
//! Adjoints flowing into `f^{(k-1)}` and `g^{(k-1)}` are carried backwards
//! from stage to stage.

use alloc::vec;
use alloc::vec::Vec;

use crate::bacf::{apply_crop, apply_crop_adjoint, interpolate, CropOperator};
use crate::error::{Error, Result};
use crate::signal::{correlation_adjoint_features, Correlator};
use crate::tensor::{ensure_shape, RealTensor3};
use crate::updater::{UpdaterParams, UpdaterTape};

/// Gradient with respect to one stage's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StageGradient {
    pub lambda: f64,
    pub rho: f64,
    pub eta: f64,
    /// One entry per crop cell, row-major.
    pub mask: Vec<f64>,
}

impl StageGradient {
    fn zeros(mask: &CropOperator) -> Self {
        Self { lambda: 0.0, rho: 0.0, eta: 0.0, mask: vec![0.0; mask.weights().len()] }
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite() && self.rho.is_finite() && self.eta.is_finite() && self.mask.iter().all(|v| v.is_finite())
    }
}

/// Gradients of the (weighted) loss with respect to every stage parameter
/// and to the tensors entering the updater.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub stages: Vec<StageGradient>,
    /// With respect to the current-frame features `z_t`.
    pub z: RealTensor3,
    /// With respect to the next-frame features `z_{t+1}`.
    pub z_next: RealTensor3,
    /// With respect to the incoming filter `f_t`.
    pub f_prev: RealTensor3,
    /// The loss value these gradients belong to.
    pub loss: f64,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.loss.is_finite()
            && self.stages.iter().all(StageGradient::is_finite)
            && self.z.is_finite()
            && self.z_next.is_finite()
            && self.f_prev.is_finite()
    }
}

/// Gradients of the total loss `sum_k J_k`.
pub fn backward(
    tape: &UpdaterTape,
    params: &UpdaterParams,
    z_next: &RealTensor3,
    y_next: &RealTensor3,
) -> Result<GradientBundle> {
    let weights = vec![1.0; tape.len()];
    backward_weighted(tape, params, z_next, y_next, &weights)
}

/// Gradients of `sum_k weights[k] * J_k`; a one-hot weight vector selects a
/// single stage-wise loss.
pub fn backward_weighted(
    tape: &UpdaterTape,
    params: &UpdaterParams,
    z_next: &RealTensor3,
    y_next: &RealTensor3,
    weights: &[f64],
) -> Result<GradientBundle> {
    let stages = tape.len();
    if params.len() != stages || weights.len() != stages {
        return Err(Error::TapeMismatch { tape: stages, params: params.len().min(weights.len()) });
    }
    let shape = tape.z.shape();
    ensure_shape(shape, z_next.shape())?;
    ensure_shape(shape.with_channels(1), y_next.shape())?;

    let solver = &tape.solver;
    let corr = solver.correlator();
    let fft = solver.fft();
    let corr_next = Correlator::from_parts(fft.clone(), fft.forward(z_next));

    let mut grads: Vec<StageGradient> = params.stages.iter().map(|s| StageGradient::zeros(&s.mask)).collect();
    let mut dz = RealTensor3::zeros(shape);
    let mut dz_next = RealTensor3::zeros(shape);
    let mut df_prev = RealTensor3::zeros(shape);
    let mut loss = 0.0;

    // adjoints of f^{(k)} and g^{(k)} arriving from stage k + 1
    let mut carry_f = RealTensor3::zeros(shape);
    let mut carry_g = RealTensor3::zeros(shape);

    for k in (0..stages).rev() {
        let p = &params.stages[k];
        let mask = &p.mask;
        let vars = &tape.stages[k];
        let prev = tape.input_vars(k, params);
        let grad = &mut grads[k];

        // stage loss and interpolation
        let mut fbar = carry_f;
        if weights[k] != 0.0 {
            let out = interpolate(&tape.f_prev, &vars.f, p.eta)?;
            let residual = y_next.sub(&corr_next.response(&out)?)?;
            loss += weights[k] * residual.norm_sqr();
            let upstream = residual.scaled(-2.0 * weights[k]);
            let dout = corr_next.adjoint_filter(&upstream)?;
            dz_next.axpy(1.0, &correlation_adjoint_features(fft, &upstream, &out)?)?;
            grad.eta += dout.dot(&vars.f.sub(&tape.f_prev)?);
            df_prev.axpy(1.0 - p.eta, &dout)?;
            fbar.axpy(p.eta, &dout)?;
        }

        // f solve
        let target = apply_crop_adjoint(mask, &vars.h)?.sub(&vars.g)?;
        let q = solver.apply_inverse(p.rho, &fbar)?;
        grad.rho += q.dot(&target.sub(&vars.f)?);
        let train_residual = tape.y.sub(&corr.response(&vars.f)?)?;
        dz.axpy(1.0, &correlation_adjoint_features(fft, &train_residual, &q)?)?;
        dz.axpy(-1.0, &correlation_adjoint_features(fft, &corr.response(&q)?, &vars.f)?)?;
        let pbar = q.scaled(p.rho);

        // p = M^T h - g, then g^{(k)} = g^{(k-1)} + f^{(k-1)} - M^T h
        let mut gbar = carry_g;
        gbar.axpy(-1.0, &pbar)?;
        let mut hbar = apply_crop(mask, &pbar)?;
        hbar.axpy(-1.0, &apply_crop(mask, &gbar)?)?;
        let through_embed = mask.extract(&pbar.sub(&gbar)?)?;
        accumulate_mask_grad(&mut grad.mask, &through_embed, &vars.h);

        let mut next_f = gbar.clone();
        let mut next_g = gbar;

        // h = rho w s / (lambda + rho w^2)
        let s = mask.extract(&prev.f.add(&prev.g)?)?;
        let plane = s.shape().plane_len();
        let mut sbar = RealTensor3::zeros(s.shape());
        for l in 0..s.shape().channels {
            for (i, &w) in mask.weights().iter().enumerate() {
                let idx = l * plane + i;
                let (sv, hb) = (s.as_slice()[idx], hbar.as_slice()[idx]);
                let denom = p.lambda + p.rho * w * w;
                let denom2 = denom * denom;
                sbar.as_mut_slice()[idx] = hb * p.rho * w / denom;
                grad.lambda -= hb * p.rho * w * sv / denom2;
                grad.rho += hb * w * sv * p.lambda / denom2;
                grad.mask[i] += hb * p.rho * sv * (p.lambda - p.rho * w * w) / denom2;
            }
        }
        let sbar_full = mask.embed(&sbar)?;
        next_f.axpy(1.0, &sbar_full)?;
        next_g.axpy(1.0, &sbar_full)?;

        carry_f = next_f;
        carry_g = next_g;
    }

    Ok(GradientBundle { stages: grads, z: dz, z_next: dz_next, f_prev: df_prev, loss })
}

/// `wbar_d += sum_l upstream_{d,l} h_{d,l}` for `M^T h = embed(w * h)`.
fn accumulate_mask_grad(mask_grad: &mut [f64], upstream: &RealTensor3, h: &RealTensor3) {
    for l in 0..h.shape().channels {
        for ((g, u), hv) in mask_grad.iter_mut().zip(upstream.plane(l)).zip(h.plane(l)) {
            *g += u * hv;
        }
    }
}
