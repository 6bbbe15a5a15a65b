use crate::tensor::Shape3;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape3, found: Shape3 },
    #[error("invalid tensor shape {0}")]
    InvalidShape(Shape3),
    #[error("data length {found} does not match shape {shape}")]
    DataLength { shape: Shape3, found: usize },
    #[error("inverse FFT left an imaginary residue of {residue:e} (relative)")]
    ImaginaryResidue { residue: f64 },
    #[error("degenerate stage parameters: lambda + rho * w^2 = {0:e}")]
    DegenerateStage(f64),
    #[error("penalty rho must be positive, got {0}")]
    NonPositiveRho(f64),
    #[error("non-finite iterate at ADMM iteration {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("crop window {crop} does not fit in grid {grid}")]
    CropOutOfBounds { crop: Shape3, grid: Shape3 },
    #[error("tape was produced with {tape} stages but {params} stage parameters were given")]
    TapeMismatch { tape: usize, params: usize },
    #[error("representor cache does not match the gradient shape")]
    CacheMismatch,
    #[error("empty image patch")]
    EmptyPatch,
    #[error("bounding box lies outside the frame")]
    BoxOutsideFrame,
    #[error("target covers fewer than 2x2 feature cells")]
    DegenerateTarget,
    #[error("training diverged: non-finite loss in stage {stage}, epoch {epoch}")]
    Divergence { stage: usize, epoch: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
