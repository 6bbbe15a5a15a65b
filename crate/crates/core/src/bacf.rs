//! The background-aware correlation filter model and its ADMM solver.
//!
//! The filter `f` lives on the full `m x n` grid; the constraint ties it to a
//! small-support filter `h` through the crop operator, `f_l = M^T h_l`. The
//! scaled dual `g` carries the constraint multiplier divided by `rho`.
//!
//! `M` is a fixed rectangular window times a per-cell weight mask shared by
//! all channels, so `M M^T` stays diagonal and the `h` step is elementwise.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::signal::Correlator;
use crate::tensor::{ensure_shape, ComplexSpectrum, RealTensor3, Shape3};
use crate::Complex;

pub const INITIAL_LAMBDA: f64 = 1.0;
pub const INITIAL_RHO: f64 = 1.0;
pub const INITIAL_ETA: f64 = 0.013;

/// Smallest admissible `lambda + rho * w^2` in the `h` step.
pub const DEGENERACY_GUARD: f64 = 1e-12;

/// Weighted rectangular crop `M`: selects a `crop_height x crop_width` window
/// at `(top, left)` of the full grid and scales each cell by its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CropOperator {
    full_height: usize,
    full_width: usize,
    crop_height: usize,
    crop_width: usize,
    top: usize,
    left: usize,
    weights: Vec<f64>,
}

impl CropOperator {
    /// Binary crop (all weights one).
    pub fn new(
        full_height: usize,
        full_width: usize,
        crop_height: usize,
        crop_width: usize,
        top: usize,
        left: usize,
    ) -> Result<Self> {
        let grid = Shape3::new(full_height, full_width, 1);
        let crop = Shape3::new(crop_height, crop_width, 1);
        if grid.is_empty() || crop.is_empty() {
            return Err(Error::InvalidShape(if grid.is_empty() { grid } else { crop }));
        }
        if top + crop_height > full_height || left + crop_width > full_width {
            return Err(Error::CropOutOfBounds { crop, grid });
        }
        Ok(Self {
            full_height,
            full_width,
            crop_height,
            crop_width,
            top,
            left,
            weights: vec![1.0; crop_height * crop_width],
        })
    }

    /// Binary crop centered on the grid cell `(m / 2, n / 2)`, where labels
    /// put their peak.
    pub fn centered(full_height: usize, full_width: usize, crop_height: usize, crop_width: usize) -> Result<Self> {
        let top = (full_height / 2).checked_sub(crop_height / 2);
        let left = (full_width / 2).checked_sub(crop_width / 2);
        match (top, left) {
            (Some(top), Some(left)) => Self::new(full_height, full_width, crop_height, crop_width, top, left),
            _ => Err(Error::CropOutOfBounds {
                crop: Shape3::new(crop_height, crop_width, 1),
                grid: Shape3::new(full_height, full_width, 1),
            }),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.weights.len() {
            return Err(Error::DataLength { shape: self.crop_shape(1), found: weights.len() });
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn full_shape(&self, channels: usize) -> Shape3 {
        Shape3::new(self.full_height, self.full_width, channels)
    }

    pub fn crop_shape(&self, channels: usize) -> Shape3 {
        Shape3::new(self.crop_height, self.crop_width, channels)
    }

    pub fn offset(&self) -> (usize, usize) {
        (self.top, self.left)
    }

    /// Per-cell weights, row-major over the crop window.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Same window geometry (weights may differ).
    pub fn same_geometry(&self, other: &Self) -> bool {
        (self.full_height, self.full_width, self.crop_height, self.crop_width, self.top, self.left)
            == (other.full_height, other.full_width, other.crop_height, other.crop_width, other.top, other.left)
    }

    fn check_full(&self, x: &RealTensor3) -> Result<()> {
        ensure_shape(self.full_shape(x.shape().channels), x.shape())
    }

    fn check_crop(&self, h: &RealTensor3) -> Result<()> {
        ensure_shape(self.crop_shape(h.shape().channels), h.shape())
    }

    /// Window extraction without weights.
    pub fn extract(&self, x: &RealTensor3) -> Result<RealTensor3> {
        self.check_full(x)?;
        let channels = x.shape().channels;
        Ok(RealTensor3::from_fn(self.crop_shape(channels), |r, c, l| x[(self.top + r, self.left + c, l)]))
    }

    /// Zero-padding embed without weights.
    pub fn embed(&self, h: &RealTensor3) -> Result<RealTensor3> {
        self.check_crop(h)?;
        let channels = h.shape().channels;
        let mut out = RealTensor3::zeros(self.full_shape(channels));
        for l in 0..channels {
            for r in 0..self.crop_height {
                for c in 0..self.crop_width {
                    out[(self.top + r, self.left + c, l)] = h[(r, c, l)];
                }
            }
        }
        Ok(out)
    }

    /// Multiplies each crop cell of every channel by its weight.
    pub fn weight(&self, h: &RealTensor3) -> Result<RealTensor3> {
        self.check_crop(h)?;
        let mut out = h.clone();
        for l in 0..h.shape().channels {
            for (v, w) in out.plane_mut(l).iter_mut().zip(&self.weights) {
                *v *= w;
            }
        }
        Ok(out)
    }
}

/// Action of `M (x) I_L`: crop, then weight.
pub fn apply_crop(mask: &CropOperator, x: &RealTensor3) -> Result<RealTensor3> {
    mask.weight(&mask.extract(x)?)
}

/// Action of `M^T (x) I_L`: weight, then zero-pad into the full grid.
pub fn apply_crop_adjoint(mask: &CropOperator, h: &RealTensor3) -> Result<RealTensor3> {
    mask.embed(&mask.weight(h)?)
}

/// Per-stage parameters `{lambda, rho, eta, M}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StageParams {
    pub lambda: f64,
    pub rho: f64,
    pub eta: f64,
    pub mask: CropOperator,
}

impl StageParams {
    /// `lambda = 1, rho = 1, eta = 0.013` with a binary mask.
    pub fn initial(mask: CropOperator) -> Self {
        Self { lambda: INITIAL_LAMBDA, rho: INITIAL_RHO, eta: INITIAL_ETA, mask }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::NonPositiveRho(self.rho));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("lambda must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidArgument("eta must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// ADMM variables: full filter `f`, cropped filter `h`, scaled dual `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterVars {
    pub f: RealTensor3,
    pub h: RealTensor3,
    pub g: RealTensor3,
}

impl FilterVars {
    pub fn zeros(mask: &CropOperator, channels: usize) -> Self {
        Self {
            f: RealTensor3::zeros(mask.full_shape(channels)),
            h: RealTensor3::zeros(mask.crop_shape(channels)),
            g: RealTensor3::zeros(mask.full_shape(channels)),
        }
    }

    fn check(&self, mask: &CropOperator) -> Result<()> {
        let channels = self.f.shape().channels;
        ensure_shape(mask.full_shape(channels), self.f.shape())?;
        ensure_shape(mask.full_shape(channels), self.g.shape())?;
        ensure_shape(mask.crop_shape(channels), self.h.shape())
    }

    /// `||f - M^T h||`
    pub fn primal_residual(&self, mask: &CropOperator) -> Result<f64> {
        Ok(self.f.sub(&apply_crop_adjoint(mask, &self.h)?)?.norm())
    }
}

/// The three terms of the constrained objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    /// `0.5 ||y - sum_l z_l * f_l||^2`
    pub data_term: f64,
    /// `lambda / 2 ||h||^2`
    pub reg_term: f64,
    /// `sum_l ||f_l - M^T h_l||^2`
    pub constraint_residual: f64,
}

impl ObjectiveBreakdown {
    pub fn objective(&self) -> f64 {
        self.data_term + self.reg_term
    }
}

/// Closed-form `h` step:
/// `h = rho w crop(f + g) / (lambda + rho w^2)` per crop cell and channel.
pub fn h_update(vars: &FilterVars, p: &StageParams) -> Result<RealTensor3> {
    vars.check(&p.mask)?;
    let s = p.mask.extract(&vars.f.add(&vars.g)?)?;
    let mut h = s;
    let channels = h.shape().channels;
    for l in 0..channels {
        for (v, &w) in h.plane_mut(l).iter_mut().zip(p.mask.weights()) {
            let denom = p.lambda + p.rho * w * w;
            if !(denom >= DEGENERACY_GUARD) {
                return Err(Error::DegenerateStage(denom));
            }
            *v *= p.rho * w / denom;
        }
    }
    Ok(h)
}

/// Dual step `g + f - M^T h`.
pub fn g_update(vars: &FilterVars, new_h: &RealTensor3, mask: &CropOperator) -> Result<RealTensor3> {
    vars.check(mask)?;
    let mut g = vars.g.add(&vars.f)?;
    g.axpy(-1.0, &apply_crop_adjoint(mask, new_h)?)?;
    Ok(g)
}

/// Solver for the `f` sub-problem
/// `min_f 0.5 ||y - sum_l z_l * f_l||^2 + rho/2 ||f - p||^2`
/// against fixed features `z` and label spectrum `y_hat`.
///
/// Per frequency bin the normal equations read
/// `(rho I + z z^H) f = z conj(y) + rho p`, with `z` the `L`-vector of feature
/// coefficients; the matrix is a rank-one update of `rho I` and is inverted
/// with the Sherman-Morrison identity.
#[derive(Debug, Clone)]
pub struct FrequencySolver {
    corr: Correlator,
    y_hat: ComplexSpectrum,
    energy: Vec<f64>,
}

impl FrequencySolver {
    pub fn new(z: &RealTensor3, y: &RealTensor3) -> Result<Self> {
        let corr = Correlator::new(z);
        ensure_shape(z.shape().with_channels(1), y.shape())?;
        let y_hat = corr.fft().forward(y);
        Ok(Self::from_parts(corr, y_hat))
    }

    pub fn with_label_spectrum(z: &RealTensor3, y_hat: &ComplexSpectrum) -> Result<Self> {
        ensure_shape(z.shape().with_channels(1), y_hat.shape())?;
        Ok(Self::from_parts(Correlator::new(z), y_hat.clone()))
    }

    fn from_parts(corr: Correlator, y_hat: ComplexSpectrum) -> Self {
        let shape = corr.shape();
        let mut energy = vec![0.0; shape.plane_len()];
        for l in 0..shape.channels {
            for (e, z) in energy.iter_mut().zip(corr.z_hat().plane(l)) {
                *e += z.norm_sqr();
            }
        }
        Self { corr, y_hat, energy }
    }

    pub fn correlator(&self) -> &Correlator {
        &self.corr
    }

    pub fn fft(&self) -> &Fft2 {
        self.corr.fft()
    }

    pub fn label_spectrum(&self) -> &ComplexSpectrum {
        &self.y_hat
    }

    pub fn shape(&self) -> Shape3 {
        self.corr.shape()
    }

    /// Applies `(rho I + z z^H)^{-1}` to every bin of `v_hat` in place.
    pub fn apply_inverse_spectrum(&self, rho: f64, v_hat: &mut ComplexSpectrum) {
        let shape = self.shape();
        let z_hat = self.corr.z_hat();
        let inv_rho = 1.0 / rho;
        for bin in 0..shape.plane_len() {
            let mut proj = Complex::new(0.0, 0.0);
            for l in 0..shape.channels {
                let i = l * shape.plane_len() + bin;
                proj += z_hat.as_slice()[i].conj() * v_hat.as_slice()[i];
            }
            let coef = proj / (rho + self.energy[bin]);
            for l in 0..shape.channels {
                let i = l * shape.plane_len() + bin;
                let z = z_hat.as_slice()[i];
                let v = &mut v_hat.as_mut_slice()[i];
                *v = (*v - z * coef) * inv_rho;
            }
        }
    }

    /// `H^{-1} v` for real `v`, where `H = C^T C + rho I` is the Hessian of the
    /// sub-problem.
    pub fn apply_inverse(&self, rho: f64, v: &RealTensor3) -> Result<RealTensor3> {
        ensure_shape(self.shape(), v.shape())?;
        let mut v_hat = self.fft().forward(v);
        self.apply_inverse_spectrum(rho, &mut v_hat);
        self.fft().inverse(&v_hat)
    }

    fn rhs_spectrum(&self, prox_target: &RealTensor3, rho: f64) -> Result<ComplexSpectrum> {
        if !(rho > 0.0) {
            return Err(Error::NonPositiveRho(rho));
        }
        let shape = self.shape();
        ensure_shape(shape, prox_target.shape())?;
        let mut rhs = self.fft().forward(prox_target);
        for l in 0..shape.channels {
            let z = self.corr.z_hat().plane(l);
            for ((r, zv), yv) in rhs.plane_mut(l).iter_mut().zip(z).zip(self.y_hat.plane(0)) {
                *r = *r * rho + zv * yv.conj();
            }
        }
        Ok(rhs)
    }

    /// Exact minimizer via the rank-one closed form.
    pub fn solve(&self, prox_target: &RealTensor3, rho: f64) -> Result<RealTensor3> {
        let mut rhs = self.rhs_spectrum(prox_target, rho)?;
        self.apply_inverse_spectrum(rho, &mut rhs);
        self.fft().inverse(&rhs)
    }

    /// Same minimizer through an explicit `L x L` complex solve per bin.
    pub fn solve_dense(&self, prox_target: &RealTensor3, rho: f64) -> Result<RealTensor3> {
        let mut rhs = self.rhs_spectrum(prox_target, rho)?;
        let shape = self.shape();
        let channels = shape.channels;
        let n = shape.plane_len();
        let z_hat = self.corr.z_hat().as_slice();
        let mut a = vec![Complex::new(0.0, 0.0); channels * channels];
        let mut b = vec![Complex::new(0.0, 0.0); channels];
        for bin in 0..n {
            for i in 0..channels {
                for j in 0..channels {
                    let diag = if i == j { rho } else { 0.0 };
                    a[i * channels + j] = z_hat[i * n + bin] * z_hat[j * n + bin].conj() + diag;
                }
                b[i] = rhs.as_slice()[i * n + bin];
            }
            gaussian_elimination(&mut a, &mut b, channels)?;
            for (i, v) in b.iter().enumerate() {
                rhs.as_mut_slice()[i * n + bin] = *v;
            }
        }
        self.fft().inverse(&rhs)
    }
}

/// In-place Gaussian elimination with partial pivoting; the solution is left
/// in `b`.
fn gaussian_elimination(a: &mut [Complex], b: &mut [Complex], n: usize) -> Result<()> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].norm_sqr().total_cmp(&a[j * n + col].norm_sqr()))
            .unwrap_or(col);
        if a[pivot * n + col].norm_sqr() == 0.0 {
            return Err(Error::InvalidArgument("singular per-frequency system"));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            b.swap(pivot, col);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            for k in col..n {
                let v = a[col * n + k];
                a[row * n + k] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row * n + k] * b[k];
        }
        b[row] = acc / a[row * n + row];
    }
    Ok(())
}

/// Closed-form `f` step: exact minimizer of
/// `0.5 ||y - sum_l z_l * f_l||^2 + rho/2 ||f - M^T h + g||^2`.
pub fn f_update(
    z: &RealTensor3,
    y_hat: &ComplexSpectrum,
    vars: &FilterVars,
    new_h: &RealTensor3,
    new_g: &RealTensor3,
    p: &StageParams,
) -> Result<RealTensor3> {
    ensure_shape(z.shape(), vars.f.shape())?;
    let solver = FrequencySolver::with_label_spectrum(z, y_hat)?;
    let target = apply_crop_adjoint(&p.mask, new_h)?.sub(new_g)?;
    solver.solve(&target, p.rho)
}

/// `(1 - eta) f_prev + eta f_new`
pub fn interpolate(f_prev: &RealTensor3, f_new: &RealTensor3, eta: f64) -> Result<RealTensor3> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument("eta must lie in [0, 1]"));
    }
    f_prev.zip_map(f_new, |a, b| (1.0 - eta) * a + eta * b)
}

/// Evaluates the data, regularization and constraint terms at `vars`.
pub fn bacf_objective(z: &RealTensor3, y: &RealTensor3, vars: &FilterVars, p: &StageParams) -> Result<ObjectiveBreakdown> {
    vars.check(&p.mask)?;
    let response = crate::signal::cross_correlate(z, &vars.f)?;
    let residual = y.sub(&response)?;
    Ok(ObjectiveBreakdown {
        data_term: 0.5 * residual.norm_sqr(),
        reg_term: 0.5 * p.lambda * vars.h.norm_sqr(),
        constraint_residual: vars.f.sub(&apply_crop_adjoint(&p.mask, &vars.h)?)?.norm_sqr(),
    })
}

/// Objective of the constrained problem at the feasible point `f = M^T h`.
pub fn constrained_objective(z: &RealTensor3, y: &RealTensor3, h: &RealTensor3, p: &StageParams) -> Result<f64> {
    let f = apply_crop_adjoint(&p.mask, h)?;
    let residual = y.sub(&crate::signal::cross_correlate(z, &f)?)?;
    Ok(0.5 * residual.norm_sqr() + 0.5 * p.lambda * h.norm_sqr())
}

/// One `h -> g -> f` cycle. The unrolled updater runs exactly this function
/// per stage.
pub fn admm_step(solver: &FrequencySolver, vars: &FilterVars, p: &StageParams) -> Result<FilterVars> {
    let h = h_update(vars, p)?;
    let g = g_update(vars, &h, &p.mask)?;
    let target = apply_crop_adjoint(&p.mask, &h)?.sub(&g)?;
    let f = solver.solve(&target, p.rho)?;
    Ok(FilterVars { f, h, g })
}

/// Outcome of a convergence run.
#[derive(Debug, Clone)]
pub struct AdmmReport {
    pub vars: FilterVars,
    pub iterations: usize,
    /// `||f - M^T h||` after every iteration.
    pub residuals: Vec<f64>,
}

/// Runs ADMM from `f = g = 0` until `||f - M^T h|| <= tol` or `max_iters`.
pub fn admm_solve(z: &RealTensor3, y: &RealTensor3, p: &StageParams, max_iters: usize, tol: f64) -> Result<FilterVars> {
    admm_solve_traced(z, y, p, max_iters, tol).map(|r| r.vars)
}

pub fn admm_solve_traced(
    z: &RealTensor3,
    y: &RealTensor3,
    p: &StageParams,
    max_iters: usize,
    tol: f64,
) -> Result<AdmmReport> {
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1"));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("tol must be positive"));
    }
    p.validate()?;
    ensure_shape(p.mask.full_shape(z.shape().channels), z.shape())?;
    let solver = FrequencySolver::new(z, y)?;
    let mut vars = FilterVars::zeros(&p.mask, z.shape().channels);
    let mut residuals = Vec::new();
    for iter in 1..=max_iters {
        vars = admm_step(&solver, &vars, p)?;
        if !vars.f.is_finite() || !vars.g.is_finite() || !vars.h.is_finite() {
            return Err(Error::NonFinite(iter));
        }
        let residual = vars.primal_residual(&p.mask)?;
        residuals.push(residual);
        if residual <= tol {
            break;
        }
    }
    Ok(AdmmReport { iterations: residuals.len(), vars, residuals })
}
