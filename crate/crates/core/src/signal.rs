//! Circular cross-correlation, Gaussian labels and cosine windows.

use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::math;
use crate::tensor::{ensure_shape, ComplexSpectrum, RealTensor3, Shape3};

/// Channel-summed circular cross-correlation
/// `r(u, v) = sum_l sum_{x, y} z_l(x + u, y + v) f_l(x, y)` (indices mod the
/// grid), evaluated in the frequency domain as `sum_l Z_l conj(F_l)`.
pub fn cross_correlate(z: &RealTensor3, f: &RealTensor3) -> Result<RealTensor3> {
    ensure_shape(z.shape(), f.shape())?;
    Correlator::new(z).response(f)
}

/// Frequency-domain correlation against a fixed feature map.
///
/// Holds the FFT plans and the feature spectrum so repeated responses and
/// their adjoints avoid re-transforming `z`.
#[derive(Debug, Clone)]
pub struct Correlator {
    fft: Fft2,
    z_hat: ComplexSpectrum,
}

impl Correlator {
    pub fn new(z: &RealTensor3) -> Self {
        let shape = z.shape();
        let fft = Fft2::new(shape.height, shape.width);
        let z_hat = fft.forward(z);
        Self { fft, z_hat }
    }

    pub fn from_parts(fft: Fft2, z_hat: ComplexSpectrum) -> Self {
        Self { fft, z_hat }
    }

    pub fn shape(&self) -> Shape3 {
        self.z_hat.shape()
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn z_hat(&self) -> &ComplexSpectrum {
        &self.z_hat
    }

    /// Spectrum of the channel-summed response for a filter spectrum.
    pub fn response_spectrum(&self, f_hat: &ComplexSpectrum) -> ComplexSpectrum {
        let shape = self.shape();
        let mut out = ComplexSpectrum::zeros(shape.with_channels(1));
        for l in 0..shape.channels {
            let (z, f) = (self.z_hat.plane(l), f_hat.plane(l));
            for ((o, a), b) in out.plane_mut(0).iter_mut().zip(z).zip(f) {
                *o += a * b.conj();
            }
        }
        out
    }

    pub fn response(&self, f: &RealTensor3) -> Result<RealTensor3> {
        ensure_shape(self.shape(), f.shape())?;
        self.fft.inverse(&self.response_spectrum(&self.fft.forward(f)))
    }

    /// Adjoint of `f -> response(f)`: maps a single-channel response-space
    /// tensor `g` to the per-channel filter-space tensor `corr(z_l, g)`.
    pub fn adjoint_filter(&self, g: &RealTensor3) -> Result<RealTensor3> {
        let shape = self.shape();
        ensure_shape(shape.with_channels(1), g.shape())?;
        let g_hat = self.fft.forward(g);
        let mut out = ComplexSpectrum::zeros(shape);
        for l in 0..shape.channels {
            for ((o, z), gv) in out.plane_mut(l).iter_mut().zip(self.z_hat.plane(l)).zip(g_hat.plane(0)) {
                *o = z * gv.conj();
            }
        }
        self.fft.inverse(&out)
    }
}

/// Adjoint of `z -> corr(z, f)` for fixed `f`: the per-channel circular
/// convolution `g * f_l`.
pub fn correlation_adjoint_features(fft: &Fft2, g: &RealTensor3, f: &RealTensor3) -> Result<RealTensor3> {
    let shape = f.shape();
    ensure_shape(shape.with_channels(1), g.shape())?;
    let g_hat = fft.forward(g);
    let mut f_hat = fft.forward(f);
    for l in 0..shape.channels {
        for (o, gv) in f_hat.plane_mut(l).iter_mut().zip(g_hat.plane(0)) {
            *o *= gv;
        }
    }
    fft.inverse(&f_hat)
}

/// Signed circular distance from `peak` to `index` on a ring of `len`.
fn circular_offset(index: usize, peak: f64, len: usize) -> f64 {
    let d = index as f64 - peak;
    d - len as f64 * math::round(d / len as f64)
}

/// Gaussian label `exp(-(dr^2 + dc^2) / (2 sigma^2))` with circular distances
/// to the peak, so translating the peak only permutes the values.
pub fn gaussian_label(height: usize, width: usize, peak_row: f64, peak_col: f64, sigma: f64) -> Result<RealTensor3> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument("label sigma must be positive"));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(Shape3::new(height, width, 1)));
    }
    if !(0.0..height as f64).contains(&peak_row) || !(0.0..width as f64).contains(&peak_col) {
        return Err(Error::InvalidArgument("label peak must lie inside the grid"));
    }
    let denom = 2.0 * sigma * sigma;
    Ok(RealTensor3::from_fn(Shape3::new(height, width, 1), |r, c, _| {
        let dr = circular_offset(r, peak_row, height);
        let dc = circular_offset(c, peak_col, width);
        math::exp(-(dr * dr + dc * dc) / denom)
    }))
}

/// Label bandwidth in feature cells for a target spanning
/// `target_h x target_w` cells.
pub fn default_label_sigma(target_h: f64, target_w: f64) -> f64 {
    math::sqrt(target_h * target_w) / 10.0
}

fn hann(len: usize) -> impl Iterator<Item = f64> {
    let denom = (len - 1) as f64;
    (0..len).map(move |i| 0.5 - 0.5 * math::cos(2.0 * PI * i as f64 / denom))
}

/// Outer product of two symmetric Hann windows (zero at the borders).
pub fn cosine_window(height: usize, width: usize) -> Result<RealTensor3> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument("cosine window needs at least 2x2 cells"));
    }
    let rows: alloc::vec::Vec<f64> = hann(height).collect();
    let cols: alloc::vec::Vec<f64> = hann(width).collect();
    Ok(RealTensor3::from_fn(Shape3::new(height, width, 1), |r, c, _| rows[r] * cols[c]))
}

/// Periodic Hann window peaking (at exactly 1) on cell `(h / 2, w / 2)`,
/// the cell that holds the label peak.
pub fn centered_window(height: usize, width: usize) -> Result<RealTensor3> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidShape(Shape3::new(height, width, 1)));
    }
    let axis = |len: usize| -> alloc::vec::Vec<f64> {
        let c = (len / 2) as f64;
        (0..len).map(|i| 0.5 + 0.5 * math::cos(2.0 * PI * (i as f64 - c) / len as f64)).collect()
    };
    let (rows, cols) = (axis(height), axis(width));
    Ok(RealTensor3::from_fn(Shape3::new(height, width, 1), |r, c, _| rows[r] * cols[c]))
}

/// Multiplies every channel of `x` by a single-channel window.
pub fn apply_window(x: &RealTensor3, window: &RealTensor3) -> Result<RealTensor3> {
    let shape = x.shape();
    ensure_shape(shape.with_channels(1), window.shape())?;
    let mut out = x.clone();
    for l in 0..shape.channels {
        for (v, w) in out.plane_mut(l).iter_mut().zip(window.as_slice()) {
            *v *= w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bacf_oracles::spatial;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Shape3, rng: &mut ChaCha8Rng) -> RealTensor3 {
        RealTensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn impulse_filter_sums_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let shape = Shape3::new(4, 5, 3);
        let z = random_tensor(shape, &mut rng);
        let f = RealTensor3::from_fn(shape, |r, c, _| if r == 0 && c == 0 { 1.0 } else { 0.0 });
        let r = cross_correlate(&z, &f).unwrap();
        for (a, b) in r.as_slice().iter().zip(z.sum_channels().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_give_zero_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = Shape3::new(4, 4, 2);
        let f = random_tensor(shape, &mut rng);
        let r = cross_correlate(&RealTensor3::zeros(shape), &f).unwrap();
        assert!(r.as_slice().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = RealTensor3::zeros(Shape3::new(4, 4, 2));
        let b = RealTensor3::zeros(Shape3::new(4, 4, 1));
        assert!(matches!(cross_correlate(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape3::new(6, 5, 2);
        let z = random_tensor(shape, &mut rng);
        let f = random_tensor(shape, &mut rng);
        let g = random_tensor(shape.with_channels(1), &mut rng);
        let corr = Correlator::new(&z);
        let lhs = corr.response(&f).unwrap().dot(&g);
        let rhs = f.dot(&corr.adjoint_filter(&g).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);

        let dz = random_tensor(shape, &mut rng);
        let lhs = cross_correlate(&dz, &f).unwrap().dot(&g);
        let rhs = dz.dot(&correlation_adjoint_features(corr.fft(), &g, &f).unwrap());
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn label_peak_symmetry_and_value() {
        let y = gaussian_label(8, 8, 3.0, 4.0, 2.0).unwrap();
        assert_eq!(y[(3, 4, 0)], 1.0);
        assert!((y[(4, 4, 0)] - (-1.0f64 / 8.0).exp()).abs() < 1e-15);
        assert!((y[(4, 4, 0)] - 0.882497).abs() < 1e-6);
        for d in 1..4 {
            assert_eq!(y[(3 + d, 4, 0)], y[(3 - d, 4, 0)]);
            assert_eq!(y[(3, (4 + d) % 8, 0)], y[(3, 4 - d, 0)]);
        }
        assert!(gaussian_label(8, 8, 0.0, 0.0, 0.0).is_err());
        assert!(gaussian_label(8, 8, 8.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn label_sum_is_translation_invariant() {
        let base: f64 = gaussian_label(9, 7, 0.0, 0.0, 1.5).unwrap().as_slice().iter().sum();
        for (r, c) in [(4.0, 3.0), (8.0, 6.0), (2.0, 5.0)] {
            let s: f64 = gaussian_label(9, 7, r, c, 1.5).unwrap().as_slice().iter().sum();
            assert!((s - base).abs() < 1e-12);
        }
    }

    #[test]
    fn hann_outer_product_4x4() {
        let w = cosine_window(4, 4).unwrap();
        // symmetric Hann of length 4: 0, 0.75, 0.75, 0
        let h = [0.0, 0.75, 0.75, 0.0];
        for r in 0..4 {
            for c in 0..4 {
                assert!((w[(r, c, 0)] - h[r] * h[c]).abs() < 1e-15);
            }
        }
        assert_eq!(w[(0, 0, 0)], 0.0);
        assert!(cosine_window(1, 4).is_err());
    }

    #[test]
    fn window_peaks_at_center() {
        let w = cosine_window(9, 7).unwrap();
        let max = w.as_slice().iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(w[(4, 3, 0)], max);
        assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn correlation_theorem(h in 1usize..9, w in 1usize..9, c in 1usize..4, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = Shape3::new(h, w, c);
            let z = random_tensor(shape, &mut rng);
            let f = random_tensor(shape, &mut rng);
            let fast = cross_correlate(&z, &f).unwrap();
            let slow = spatial::cross_correlate(z.as_slice(), f.as_slice(), h, w, c);
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
