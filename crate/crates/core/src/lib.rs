//! Background-aware correlation filters (BACF) solved by ADMM, with the
//! iterations unrolled into a fixed number of trainable stages.
//!
//! The crate is `no_std` and only needs an allocator. Everything that touches
//! the file system, images on disk, or the command line lives in the harness
//! crate.
//!
//! Module map:
//!
//! * [`tensor`], [`fft`], [`signal`]: multi-channel tensors, per-channel 2-D
//!   FFT, circular cross-correlation, labels and windows.
//! * [`bacf`]: crop operator, the three ADMM step operators, interpolation,
//!   objective evaluation and the convergence-run solver.
//! * [`updater`]: the K-stage unrolled forward pass and the tracking losses.
//! * [`grad`]: the exact reverse pass through the unrolled stages.
//! * [`gradcheck`]: central finite-difference checks of [`grad`].
//! * [`representor`]: cheap base features plus one learnable convolution.
//! * [`trainer`]: stage-wise SGD and joint finetuning.
//! * [`tracker`]: the online tracking loop.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod bacf;
pub mod error;
pub mod fft;
pub mod grad;
pub mod gradcheck;
pub mod image;
pub(crate) mod math;
pub mod representor;
pub mod signal;
pub mod tensor;
pub mod tracker;
pub mod trainer;
pub mod updater;

pub use bacf::{CropOperator, FilterVars, ObjectiveBreakdown, StageParams};
pub use error::{Error, Result};
pub use grad::GradientBundle;
pub use image::GrayImage;
pub use representor::{ConvLayerParams, FeatureConfig, FeatureRecipe};
pub use tensor::{ComplexSpectrum, RealTensor3, Shape3};
pub use tracker::{BoundingBox, TrackerConfig, TrackerState};
pub use updater::{StageOutputs, UpdaterParams, UpdaterTape};

/// Complex scalar used for all spectra.
pub type Complex = num_complex::Complex64;
