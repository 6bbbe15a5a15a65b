//! Feature extraction: cell-averaged base channels, an optional learnable
//! convolution with a rectifier, and a cosine window.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::math;
use crate::signal::{apply_window, cosine_window};
use crate::tensor::{ensure_shape, RealTensor3, Shape3};

/// Fixed channels computed from the raw patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRecipe {
    Gray,
    /// Intensity plus absolute horizontal and vertical gradients.
    GrayGradients,
}

impl FeatureRecipe {
    pub fn channels(self) -> usize {
        match self {
            Self::Gray => 1,
            Self::GrayGradients => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub cell_size: usize,
    pub recipe: FeatureRecipe,
    pub learnable: bool,
    pub kernel_size: usize,
    pub out_channels: usize,
    /// Multiply features by the cosine window before correlation.
    pub window_features: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            recipe: FeatureRecipe::GrayGradients,
            learnable: true,
            kernel_size: 3,
            out_channels: 6,
            window_features: true,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 {
            return Err(Error::InvalidArgument("cell size must be at least 1"));
        }
        if self.learnable && (self.out_channels == 0 || self.kernel_size.is_multiple_of(2)) {
            return Err(Error::InvalidArgument("learnable layer needs L >= 1 and an odd kernel"));
        }
        Ok(())
    }

    /// Number of channels `L` of the produced feature map.
    pub fn channels(&self) -> usize {
        if self.learnable {
            self.out_channels
        } else {
            self.recipe.channels()
        }
    }

    /// Feature grid for a patch of the given pixel size.
    pub fn grid(&self, patch_width: usize, patch_height: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if patch_width == 0 || patch_height == 0 {
            return Err(Error::EmptyPatch);
        }
        if !patch_width.is_multiple_of(self.cell_size) || !patch_height.is_multiple_of(self.cell_size) {
            return Err(Error::InvalidArgument("patch size must be a multiple of the cell size"));
        }
        Ok((patch_height / self.cell_size, patch_width / self.cell_size))
    }
}

/// Weights `W_F` of the learnable layer. The kernel is stored as
/// `k x k x C_in x L` with index `((a * k + b) * C_in + i) * L + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub kernel_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayerParams {
    pub fn zeros(kernel_size: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        let layer = Self {
            kernel_size,
            in_channels,
            out_channels,
            weights: vec![0.0; kernel_size * kernel_size * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        };
        layer.validate()?;
        Ok(layer)
    }

    /// Center tap `+1` into channel `i` and `-1` into channel `C_in + i`, so the
    /// rectified output keeps both signs of every base channel.
    pub fn signed_identity(kernel_size: usize, in_channels: usize) -> Result<Self> {
        let mut layer = Self::zeros(kernel_size, in_channels, 2 * in_channels)?;
        let center = kernel_size / 2;
        for i in 0..in_channels {
            let at = layer.index(center, center, i, i);
            layer.weights[at] = 1.0;
            let at = layer.index(center, center, i, in_channels + i);
            layer.weights[at] = -1.0;
        }
        Ok(layer)
    }

    /// Uniform weights in `[-scale, scale]`, zero bias.
    pub fn random(kernel_size: usize, in_channels: usize, out_channels: usize, scale: f64, seed: u64) -> Result<Self> {
        let mut layer = Self::zeros(kernel_size, in_channels, out_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut layer.weights {
            *w = rng.random_range(-scale..=scale);
        }
        Ok(layer)
    }

    pub fn for_config(cfg: &FeatureConfig) -> Result<Self> {
        let c_in = cfg.recipe.channels();
        if cfg.out_channels == 2 * c_in {
            Self::signed_identity(cfg.kernel_size, c_in)
        } else {
            Self::random(cfg.kernel_size, c_in, cfg.out_channels, 0.5, 0)
        }
    }

    pub fn index(&self, a: usize, b: usize, i: usize, o: usize) -> usize {
        ((a * self.kernel_size + b) * self.in_channels + i) * self.out_channels + o
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size.is_multiple_of(2) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("kernel must be odd with non-empty channels"));
        }
        let expected = self.kernel_size * self.kernel_size * self.in_channels * self.out_channels;
        if self.weights.len() != expected || self.bias.len() != self.out_channels {
            return Err(Error::InvalidArgument("kernel or bias length does not match the layer shape"));
        }
        if let Some(i) = self.weights.iter().chain(&self.bias).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(())
    }

    /// Number of scalar parameters (kernel then bias).
    pub fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradient of a loss with respect to `W_F`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGradient {
    pub fn zeros(layer: &ConvLayerParams) -> Self {
        Self { weights: vec![0.0; layer.weights.len()], bias: vec![0.0; layer.bias.len()] }
    }

    pub fn accumulate(&mut self, scale: f64, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Forward state kept for [`representor_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentorCache {
    pub input: RealTensor3,
    /// Pre-rectifier activations; `None` when the learnable layer is off.
    pub pre_activation: Option<RealTensor3>,
    pub window: Option<RealTensor3>,
}

/// Channels whose RMS after mean removal falls below this are zeroed.
pub const FLAT_CHANNEL_RMS: f64 = 1e-9;

/// Cell-averaged base channels of a patch, each shifted to zero mean and
/// scaled to unit RMS.
pub fn base_channels(patch: &GrayImage, cfg: &FeatureConfig) -> Result<RealTensor3> {
    let (rows, cols) = cfg.grid(patch.width(), patch.height())?;
    let cell = cfg.cell_size;
    let shape = Shape3::new(rows, cols, cfg.recipe.channels());
    let mut out = RealTensor3::zeros(shape);
    let norm = 1.0 / (cell * cell) as f64;
    let (w, h) = (patch.width(), patch.height());
    let px = patch.as_slice();
    let plane = shape.plane_len();
    let gradients = cfg.recipe == FeatureRecipe::GrayGradients;
    let data = out.as_mut_slice();
    for y in 0..h {
        let row = &px[y * w..][..w];
        // central differences with edge replication
        let up = &px[y.saturating_sub(1) * w..][..w];
        let down = &px[(y + 1).min(h - 1) * w..][..w];
        let base = (y / cell) * cols;
        for x in 0..w {
            let idx = base + x / cell;
            data[idx] += row[x] * norm;
            if gradients {
                let dx = 0.5 * (row[(x + 1).min(w - 1)] - row[x.saturating_sub(1)]);
                let dy = 0.5 * (down[x] - up[x]);
                data[plane + idx] += math::abs(dx) * norm;
                data[2 * plane + idx] += math::abs(dy) * norm;
            }
        }
    }
    for l in 0..shape.channels {
        let plane = out.plane_mut(l);
        let n = plane.len() as f64;
        let mean = plane.iter().sum::<f64>() / n;
        plane.iter_mut().for_each(|v| *v -= mean);
        let rms = math::sqrt(plane.iter().map(|v| v * v).sum::<f64>() / n);
        // flat channels become exactly zero instead of amplified rounding noise
        let gain = if rms > FLAT_CHANNEL_RMS { 1.0 / rms } else { 0.0 };
        plane.iter_mut().for_each(|v| *v *= gain);
    }
    Ok(out)
}

/// Same-size zero-padded convolution plus bias, without rectifier.
fn convolve(input: &RealTensor3, layer: &ConvLayerParams) -> RealTensor3 {
    let shape = input.shape();
    let (m, n) = (shape.height, shape.width);
    let k = layer.kernel_size;
    let half = k / 2;
    let mut out = RealTensor3::from_fn(shape.with_channels(layer.out_channels), |_, _, o| layer.bias[o]);
    for a in 0..k {
        for b in 0..k {
            // output (r, c) reads input (r + a - half, c + b - half)
            let r_lo = half.saturating_sub(a);
            let r_hi = (m + half).saturating_sub(a).min(m);
            let c_lo = half.saturating_sub(b);
            let c_hi = (n + half).saturating_sub(b).min(n);
            for i in 0..layer.in_channels {
                let src = input.plane(i);
                for o in 0..layer.out_channels {
                    let w = layer.weights[layer.index(a, b, i, o)];
                    if w == 0.0 {
                        continue;
                    }
                    let dst = out.plane_mut(o);
                    for r in r_lo..r_hi {
                        let rr = r + a - half;
                        for c in c_lo..c_hi {
                            dst[r * n + c] += w * src[rr * n + c + b - half];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Applies the learnable layer (if enabled) and the window to base channels.
pub fn apply_layer(
    base: &RealTensor3,
    cfg: &FeatureConfig,
    layer: Option<&ConvLayerParams>,
) -> Result<(RealTensor3, RepresentorCache)> {
    cfg.validate()?;
    let shape = base.shape();
    if !cfg.learnable {
        ensure_shape(shape.with_channels(cfg.recipe.channels()), shape)?;
    }
    let window = if cfg.window_features { Some(cosine_window(shape.height, shape.width)?) } else { None };
    let (activated, pre_activation) = if cfg.learnable {
        let layer = layer.ok_or(Error::InvalidArgument("learnable layer enabled but no weights given"))?;
        layer.validate()?;
        if layer.in_channels != shape.channels || layer.out_channels != cfg.out_channels || layer.kernel_size != cfg.kernel_size {
            return Err(Error::InvalidArgument("layer shape does not match the feature config"));
        }
        let pre = convolve(base, layer);
        (pre.map(|v| v.max(0.0)), Some(pre))
    } else {
        (base.clone(), None)
    };
    let out = match &window {
        Some(w) => apply_window(&activated, w)?,
        None => activated,
    };
    Ok((out, RepresentorCache { input: base.clone(), pre_activation, window }))
}

/// `psi(patch; W_F)`.
pub fn extract_features(patch: &GrayImage, cfg: &FeatureConfig, layer: Option<&ConvLayerParams>) -> Result<RealTensor3> {
    Ok(extract_features_cached(patch, cfg, layer)?.0)
}

pub fn extract_features_cached(
    patch: &GrayImage,
    cfg: &FeatureConfig,
    layer: Option<&ConvLayerParams>,
) -> Result<(RealTensor3, RepresentorCache)> {
    apply_layer(&base_channels(patch, cfg)?, cfg, layer)
}

/// Gradient of `<d_features, psi>` with respect to the layer weights and
/// bias. The rectifier's derivative at exactly zero is taken as zero.
pub fn representor_backward(
    d_features: &RealTensor3,
    cache: &RepresentorCache,
    layer: &ConvLayerParams,
) -> Result<ConvGradient> {
    let pre = cache.pre_activation.as_ref().ok_or(Error::CacheMismatch)?;
    if pre.shape() != d_features.shape()
        || layer.out_channels != pre.shape().channels
        || layer.in_channels != cache.input.shape().channels
    {
        return Err(Error::CacheMismatch);
    }
    let shape = pre.shape();
    let (m, n) = (shape.height, shape.width);
    // upstream through window and rectifier
    let mut delta = d_features.clone();
    for o in 0..shape.channels {
        let plane = delta.plane_mut(o);
        for (idx, (d, p)) in plane.iter_mut().zip(pre.plane(o)).enumerate() {
            let w = cache.window.as_ref().map_or(1.0, |w| w.as_slice()[idx]);
            *d = if *p > 0.0 { *d * w } else { 0.0 };
        }
    }
    let mut grad = ConvGradient::zeros(layer);
    for o in 0..shape.channels {
        grad.bias[o] = delta.plane(o).iter().sum();
    }
    let k = layer.kernel_size;
    let half = k / 2;
    for a in 0..k {
        for b in 0..k {
            let r_lo = half.saturating_sub(a);
            let r_hi = (m + half).saturating_sub(a).min(m);
            let c_lo = half.saturating_sub(b);
            let c_hi = (n + half).saturating_sub(b).min(n);
            for i in 0..layer.in_channels {
                let src = cache.input.plane(i);
                for o in 0..layer.out_channels {
                    let d = delta.plane(o);
                    let mut acc = 0.0;
                    for r in r_lo..r_hi {
                        let rr = r + a - half;
                        for c in c_lo..c_hi {
                            acc += d[r * n + c] * src[rr * n + c + b - half];
                        }
                    }
                    grad.weights[layer.index(a, b, i, o)] = acc;
                }
            }
        }
    }
    Ok(grad)
}
