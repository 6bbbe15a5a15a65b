//! Dense multi-channel 2-D tensors.
//!
//! Storage is channel-planar: channel `l` occupies one contiguous row-major
//! `height x width` plane, so per-channel transforms work on plain slices.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::Complex;

/// Height, width and channel count of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape3 {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub const fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }

    #[inline]
    pub const fn offset(&self, row: usize, col: usize, channel: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    fn validate(self) -> Result<Self> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            Err(Error::InvalidShape(self))
        } else {
            Ok(self)
        }
    }
}

impl fmt::Display for Shape3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Errors unless `a == b`.
pub fn ensure_shape(expected: Shape3, found: Shape3) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected, found })
    }
}

/// An `m x n x L` real tensor: feature maps, filters, labels, responses.
#[derive(Clone, Debug, PartialEq)]
pub struct RealTensor3 {
    shape: Shape3,
    data: Vec<f64>,
}

impl RealTensor3 {
    pub fn zeros(shape: Shape3) -> Self {
        assert!(!shape.is_empty(), "tensor shape must be non-empty");
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn from_vec(shape: Shape3, data: Vec<f64>) -> Result<Self> {
        let shape = shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::DataLength { shape, found: data.len() });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from `f(row, col, channel)`.
    pub fn from_fn(shape: Shape3, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(shape);
        for l in 0..shape.channels {
            for r in 0..shape.height {
                for c in 0..shape.width {
                    out.data[shape.offset(r, c, l)] = f(r, c, l);
                }
            }
        }
        out
    }

    #[inline]
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.shape.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.shape.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.norm_sqr())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| f64::max(m, crate::math::abs(*v)))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_shape(self.shape, other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self += factor * other`
    pub fn axpy(&mut self, factor: f64, other: &Self) -> Result<()> {
        ensure_shape(self.shape, other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    /// Sum over channels, producing a single-channel tensor.
    pub fn sum_channels(&self) -> Self {
        let mut out = Self::zeros(self.shape.with_channels(1));
        for l in 0..self.shape.channels {
            for (o, v) in out.data.iter_mut().zip(self.plane(l)) {
                *o += v;
            }
        }
        out
    }
}

impl Index<(usize, usize, usize)> for RealTensor3 {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c, l): (usize, usize, usize)) -> &f64 {
        &self.data[self.shape.offset(r, c, l)]
    }
}

impl IndexMut<(usize, usize, usize)> for RealTensor3 {
    #[inline]
    fn index_mut(&mut self, (r, c, l): (usize, usize, usize)) -> &mut f64 {
        let i = self.shape.offset(r, c, l);
        &mut self.data[i]
    }
}

/// Per-channel 2-D DFT coefficients, same layout as [`RealTensor3`].
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    shape: Shape3,
    data: Vec<Complex>,
}

impl ComplexSpectrum {
    pub fn zeros(shape: Shape3) -> Self {
        assert!(!shape.is_empty(), "spectrum shape must be non-empty");
        Self { shape, data: vec![Complex::new(0.0, 0.0); shape.len()] }
    }

    pub fn from_vec(shape: Shape3, data: Vec<Complex>) -> Result<Self> {
        let shape = shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::DataLength { shape, found: data.len() });
        }
        Ok(Self { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn as_slice(&self) -> &[Complex] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex] {
        &mut self.data
    }

    pub fn plane(&self, channel: usize) -> &[Complex] {
        let n = self.shape.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn plane_mut(&mut self, channel: usize) -> &mut [Complex] {
        let n = self.shape.plane_len();
        &mut self.data[channel * n..(channel + 1) * n]
    }

    pub fn max_abs(&self) -> f64 {
        crate::math::sqrt(self.data.iter().fold(0.0, |m, v| f64::max(m, v.norm_sqr())))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }
}

impl Index<(usize, usize, usize)> for ComplexSpectrum {
    type Output = Complex;

    #[inline]
    fn index(&self, (r, c, l): (usize, usize, usize)) -> &Complex {
        &self.data[self.shape.offset(r, c, l)]
    }
}

impl IndexMut<(usize, usize, usize)> for ComplexSpectrum {
    #[inline]
    fn index_mut(&mut self, (r, c, l): (usize, usize, usize)) -> &mut Complex {
        let i = self.shape.offset(r, c, l);
        &mut self.data[i]
    }
}
