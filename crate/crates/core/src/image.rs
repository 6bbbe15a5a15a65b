//! Minimal grayscale raster with bilinear resampling.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Row-major grayscale image with intensities stored as `f64`
/// (the harness decodes 8-bit frames into `[0, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyPatch);
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument("image data length does not match its size"));
        }
        Ok(Self { width, height, data })
    }

    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image must be non-empty");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with edge replication outside the image.
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    /// Bilinear sample at pixel-center coordinates (`(0, 0)` is the center of
    /// the top-left pixel), replicating edges.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (math::floor(x), math::floor(y));
        let (fx, fy) = (x - x0, y - y0);
        let (xi, yi) = (x0 as isize, y0 as isize);
        let top = self.get_clamped(xi, yi) * (1.0 - fx) + self.get_clamped(xi + 1, yi) * fx;
        let bottom = self.get_clamped(xi, yi + 1) * (1.0 - fx) + self.get_clamped(xi + 1, yi + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Resamples the `src_w x src_h` window centered at `(cx, cy)` (continuous
    /// coordinates, pixel `i` spanning `[i, i + 1)`) to `out_w x out_h` pixels.
    pub fn crop_resized(&self, cx: f64, cy: f64, src_w: f64, src_h: f64, out_w: usize, out_h: usize) -> Result<Self> {
        if out_w == 0 || out_h == 0 || !(src_w > 0.0) || !(src_h > 0.0) {
            return Err(Error::EmptyPatch);
        }
        let (sx, sy) = (src_w / out_w as f64, src_h / out_h as f64);
        let (left, top) = (cx - src_w / 2.0, cy - src_h / 2.0);
        // Separable lookups: same taps and weights as `sample`, computed once
        // per output column and row.
        let taps = |len: usize, extent: usize, origin: f64, step: f64| -> Vec<(usize, usize, f64)> {
            let last = extent as isize - 1;
            (0..len)
                .map(|i| {
                    let v = origin + (i as f64 + 0.5) * step - 0.5;
                    let v0 = math::floor(v);
                    let k = v0 as isize;
                    (k.clamp(0, last) as usize, (k + 1).clamp(0, last) as usize, v - v0)
                })
                .collect()
        };
        let cols = taps(out_w, self.width, left, sx);
        let rows = taps(out_h, self.height, top, sy);
        let mut data = Vec::with_capacity(out_w * out_h);
        for &(y0, y1, fy) in &rows {
            let (r0, r1) = (&self.data[y0 * self.width..][..self.width], &self.data[y1 * self.width..][..self.width]);
            for &(x0, x1, fx) in &cols {
                let upper = r0[x0] * (1.0 - fx) + r0[x1] * fx;
                let lower = r1[x0] * (1.0 - fx) + r1[x1] * fx;
                data.push(upper * (1.0 - fy) + lower * fy);
            }
        }
        Self::new(out_w, out_h, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_crop_reproduces_image() {
        let img = GrayImage::from_fn(7, 5, |x, y| (x * 3 + y * 11) as f64 / 50.0);
        let out = img.crop_resized(3.5, 2.5, 7.0, 5.0, 7, 5).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_shift_and_edge_replication() {
        let img = GrayImage::from_fn(6, 6, |x, y| (x + 10 * y) as f64);
        let out = img.crop_resized(4.0, 3.0, 4.0, 4.0, 4, 4).unwrap();
        assert_eq!(out.get(0, 0), img.get(2, 1));
        assert_eq!(out.get(3, 3), img.get(5, 4));
        let outside = img.crop_resized(-10.0, -10.0, 2.0, 2.0, 2, 2).unwrap();
        assert!(outside.as_slice().iter().all(|&v| v == img.get(0, 0)));
    }

    #[test]
    fn bilinear_midpoint() {
        let img = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!((img.sample(0.5, 0.0) - 0.5).abs() < 1e-15);
        assert!((img.sample(0.25, 3.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(GrayImage::new(0, 3, vec![]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        let img = GrayImage::from_fn(2, 2, |_, _| 0.0);
        assert!(img.crop_resized(1.0, 1.0, 0.0, 2.0, 2, 2).is_err());
    }
}
