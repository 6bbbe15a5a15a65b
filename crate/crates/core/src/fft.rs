//! Complex FFT of arbitrary length and the per-channel 2-D transforms.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; every other length
//! goes through Bluestein's chirp-z reduction onto a power-of-two convolution.
//! The forward transform is unnormalized and the inverse carries `1/(mn)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{ComplexSpectrum, RealTensor3};
use crate::Complex;

/// Largest admissible `max|Im|` of an inverse transform relative to the
/// largest spectrum magnitude before the input is rejected as non-real.
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
struct Radix2 {
    len: usize,
    // e^{-2 pi i k / len}, k < len / 2
    twiddles: Vec<Complex>,
    // (i, j) pairs with j = bit-reverse(i) > i
    swaps: Vec<(usize, usize)>,
}

impl Radix2 {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let twiddles = (0..len / 2)
            .map(|k| {
                let angle = -2.0 * PI * k as f64 / len as f64;
                Complex::new(math::cos(angle), math::sin(angle))
            })
            .collect();
        let bits = len.trailing_zeros();
        let swaps = (0..len)
            .filter_map(|i| {
                let j = i.reverse_bits().checked_shr(usize::BITS - bits).unwrap_or(0);
                (j > i).then_some((i, j))
            })
            .collect();
        Self { len, twiddles, swaps }
    }

    fn forward(&self, buf: &mut [Complex]) {
        let n = self.len;
        if n <= 1 {
            return;
        }
        for &(i, j) in &self.swaps {
            buf.swap(i, j);
        }
        let buf = &mut buf[..n];
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for block in buf.chunks_exact_mut(size) {
                let (lo, hi) = block.split_at_mut(half);
                for ((a, b), w) in lo.iter_mut().zip(hi.iter_mut()).zip(self.twiddles.iter().step_by(stride)) {
                    let t = *b * *w;
                    *b = *a - t;
                    *a += t;
                }
            }
            size *= 2;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    len: usize,
    inner: Radix2,
    // e^{-i pi k^2 / len}
    chirp: Vec<Complex>,
    kernel_spectrum: Vec<Complex>,
}

impl Bluestein {
    fn new(len: usize) -> Self {
        let inner_len = (2 * len - 1).next_power_of_two();
        let inner = Radix2::new(inner_len);
        let modulus = 2 * len as u128;
        let chirp: Vec<Complex> = (0..len)
            .map(|k| {
                // reduce k^2 mod 2N first so the angle stays small and exact
                let q = (k as u128 * k as u128) % modulus;
                let angle = -PI * q as f64 / len as f64;
                Complex::new(math::cos(angle), math::sin(angle))
            })
            .collect();
        let mut kernel = vec![Complex::new(0.0, 0.0); inner_len];
        kernel[0] = chirp[0].conj();
        for k in 1..len {
            kernel[k] = chirp[k].conj();
            kernel[inner_len - k] = chirp[k].conj();
        }
        inner.forward(&mut kernel);
        Self { len, inner, chirp, kernel_spectrum: kernel }
    }

    fn forward(&self, buf: &mut [Complex], scratch: &mut Vec<Complex>) {
        let m = self.inner.len;
        scratch.clear();
        scratch.resize(m, Complex::new(0.0, 0.0));
        for k in 0..self.len {
            scratch[k] = buf[k] * self.chirp[k];
        }
        self.inner.forward(scratch);
        for (s, k) in scratch.iter_mut().zip(&self.kernel_spectrum) {
            *s = (*s * k).conj();
        }
        // inverse via conjugation: ifft(x) = conj(fft(conj(x))) / m
        self.inner.forward(scratch);
        let scale = 1.0 / m as f64;
        for k in 0..self.len {
            buf[k] = scratch[k].conj() * scale * self.chirp[k];
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// A reusable 1-D FFT of fixed length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    kernel: Kernel,
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "FFT length must be positive");
        let kernel = if len.is_power_of_two() {
            Kernel::Radix2(Radix2::new(len))
        } else {
            Kernel::Bluestein(Bluestein::new(len))
        };
        Self { len, kernel }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward DFT.
    pub fn forward(&self, buf: &mut [Complex], scratch: &mut Vec<Complex>) {
        assert_eq!(buf.len(), self.len);
        match &self.kernel {
            Kernel::Radix2(k) => k.forward(buf),
            Kernel::Bluestein(k) => k.forward(buf, scratch),
        }
    }

    /// In-place unnormalized inverse DFT (no `1/len` factor).
    pub fn inverse(&self, buf: &mut [Complex], scratch: &mut Vec<Complex>) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf, scratch);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

/// Row and column plans for one `m x n` grid.
#[derive(Debug, Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, rows: FftPlan::new(width), cols: FftPlan::new(height) }
    }

    fn transform_plane(&self, plane: &mut [Complex], inverse: bool) {
        let (m, n) = (self.height, self.width);
        let mut scratch = Vec::new();
        for row in plane.chunks_exact_mut(n) {
            if inverse {
                self.rows.inverse(row, &mut scratch);
            } else {
                self.rows.forward(row, &mut scratch);
            }
        }
        let mut column = vec![Complex::new(0.0, 0.0); m];
        for c in 0..n {
            for r in 0..m {
                column[r] = plane[r * n + c];
            }
            if inverse {
                self.cols.inverse(&mut column, &mut scratch);
            } else {
                self.cols.forward(&mut column, &mut scratch);
            }
            for r in 0..m {
                plane[r * n + c] = column[r];
            }
        }
    }

    /// Two real channels share one complex transform: with `z = a + i b`,
    /// `A[k] = (Z[k] + conj Z[-k]) / 2` and `B[k] = (Z[k] - conj Z[-k]) / 2i`.
    pub fn forward(&self, x: &RealTensor3) -> ComplexSpectrum {
        let shape = x.shape();
        let (m, n) = (self.height, self.width);
        assert_eq!((shape.height, shape.width), (m, n));
        let mut out = ComplexSpectrum::zeros(shape);
        let mut packed = vec![Complex::new(0.0, 0.0); m * n];
        let mut l = 0;
        while l < shape.channels {
            if l + 1 == shape.channels {
                let plane = out.plane_mut(l);
                for (p, &v) in plane.iter_mut().zip(x.plane(l)) {
                    *p = Complex::new(v, 0.0);
                }
                self.transform_plane(plane, false);
                break;
            }
            for ((p, &a), &b) in packed.iter_mut().zip(x.plane(l)).zip(x.plane(l + 1)) {
                *p = Complex::new(a, b);
            }
            self.transform_plane(&mut packed, false);
            let data = out.as_mut_slice();
            let (first, second) = data[l * m * n..(l + 2) * m * n].split_at_mut(m * n);
            for r in 0..m {
                let rr = (m - r) % m;
                for c in 0..n {
                    let z = packed[r * n + c];
                    let w = packed[rr * n + (n - c) % n].conj();
                    first[r * n + c] = (z + w) * 0.5;
                    let d = (z - w) * 0.5;
                    second[r * n + c] = Complex::new(d.im, -d.re);
                }
            }
            l += 2;
        }
        out
    }

    /// Inverse transform of a spectrum, keeping the complex result.
    pub fn inverse_complex(&self, spectrum: &ComplexSpectrum) -> ComplexSpectrum {
        let shape = spectrum.shape();
        assert_eq!((shape.height, shape.width), (self.height, self.width));
        let mut out = spectrum.clone();
        let scale = 1.0 / shape.plane_len() as f64;
        for l in 0..shape.channels {
            let plane = out.plane_mut(l);
            self.transform_plane(plane, true);
            for v in plane.iter_mut() {
                *v *= scale;
            }
        }
        out
    }

    /// Inverse transform of the spectrum of a real tensor.
    pub fn inverse(&self, spectrum: &ComplexSpectrum) -> Result<RealTensor3> {
        let complex = self.inverse_complex(spectrum);
        let scale = spectrum.max_abs();
        let residue = complex.as_slice().iter().fold(0.0, |m, v| f64::max(m, math::abs(v.im)));
        if residue > IMAGINARY_TOLERANCE * scale {
            return Err(Error::ImaginaryResidue { residue: residue / scale });
        }
        RealTensor3::from_vec(spectrum.shape(), complex.as_slice().iter().map(|v| v.re).collect())
    }
}

/// Unnormalized forward 2-D DFT applied independently to every channel.
pub fn fft2_per_channel(x: &RealTensor3) -> ComplexSpectrum {
    let shape = x.shape();
    Fft2::new(shape.height, shape.width).forward(x)
}

/// Inverse of [`fft2_per_channel`]; rejects spectra that are not
/// (numerically) conjugate-symmetric.
pub fn ifft2_per_channel(spectrum: &ComplexSpectrum) -> Result<RealTensor3> {
    let shape = spectrum.shape();
    Fft2::new(shape.height, shape.width).inverse(spectrum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape3;
    use bacf_oracles::dft::naive_dft2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: Shape3, seed: u64) -> RealTensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RealTensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zeros_map_to_zeros() {
        let x = RealTensor3::zeros(Shape3::new(4, 4, 1));
        assert!(fft2_per_channel(&x).as_slice().iter().all(|v| v.norm_sqr() == 0.0));
    }

    #[test]
    fn constant_has_only_dc() {
        let c = 0.75;
        let x = RealTensor3::from_fn(Shape3::new(3, 5, 2), |_, _, _| c);
        let spec = fft2_per_channel(&x);
        for l in 0..2 {
            for (i, v) in spec.plane(l).iter().enumerate() {
                if i == 0 {
                    assert!((v.re - c * 15.0).abs() < 1e-12 && v.im.abs() < 1e-12);
                } else {
                    assert!(v.norm_sqr().sqrt() < 1e-12, "bin {i} = {v}");
                }
            }
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_sizes() {
        let x = random_tensor(Shape3::new(5, 6, 2), 11);
        let spec = fft2_per_channel(&x);
        for l in 0..2 {
            let oracle = naive_dft2(x.plane(l), 5, 6);
            for (a, (re, im)) in spec.plane(l).iter().zip(oracle) {
                assert!((a.re - re).abs() < 1e-10 && (a.im - im).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn round_trip_and_special_inverses() {
        let x = random_tensor(Shape3::new(4, 4, 3), 3);
        let back = ifft2_per_channel(&fft2_per_channel(&x)).unwrap();
        for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }

        let zero = ComplexSpectrum::zeros(Shape3::new(4, 4, 1));
        assert!(ifft2_per_channel(&zero).unwrap().as_slice().iter().all(|&v| v == 0.0));

        let mut dc = ComplexSpectrum::zeros(Shape3::new(4, 4, 1));
        dc[(0, 0, 0)] = Complex::new(16.0, 0.0);
        let ones = ifft2_per_channel(&dc).unwrap();
        assert!(ones.as_slice().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_hermitian_spectrum() {
        let mut s = ComplexSpectrum::zeros(Shape3::new(4, 4, 1));
        s[(0, 1, 0)] = Complex::new(1.0, 0.0);
        assert!(matches!(ifft2_per_channel(&s), Err(Error::ImaginaryResidue { .. })));
    }

    #[test]
    fn one_dimensional_lengths_against_naive() {
        for len in [1usize, 2, 3, 7, 8, 12, 17, 31, 64] {
            let mut rng = ChaCha8Rng::seed_from_u64(len as u64);
            let input: Vec<Complex> = (0..len)
                .map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let mut buf = input.clone();
            FftPlan::new(len).forward(&mut buf, &mut Vec::new());
            for (k, v) in buf.iter().enumerate() {
                let mut acc = Complex::new(0.0, 0.0);
                for (j, x) in input.iter().enumerate() {
                    let a = -2.0 * PI * ((j * k) % len) as f64 / len as f64;
                    acc += x * Complex::new(a.cos(), a.sin());
                }
                assert!((acc - v).norm() < 1e-10, "len {len} bin {k}");
            }
        }
    }

    proptest! {
        #[test]
        fn parseval(h in 1usize..9, w in 1usize..9, c in 1usize..4, seed in any::<u64>()) {
            let x = random_tensor(Shape3::new(h, w, c), seed);
            let energy = x.norm_sqr();
            let spectral = fft2_per_channel(&x).norm_sqr() / (h * w) as f64;
            prop_assert!((energy - spectral).abs() <= 1e-9 * energy.max(1e-300));
        }
    }
}
