//! Online tracking: localization over a small scale set followed by a
//! filter update through the unrolled updater.

use alloc::vec;
use alloc::vec::Vec;

use crate::bacf::{admm_solve, CropOperator, StageParams};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::math;
use crate::representor::{extract_features, ConvLayerParams, FeatureConfig};
use crate::signal::{centered_window, default_label_sigma, gaussian_label, Correlator};
use crate::tensor::RealTensor3;
use crate::updater::{forward, UpdaterParams};

/// Axis-aligned box in 0-indexed pixel coordinates (top-left corner and size).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        let b = Self { x, y, width, height };
        if !(x.is_finite() && y.is_finite()) || !(width > 0.0 && width.is_finite()) || !(height > 0.0 && height.is_finite()) {
            return Err(Error::InvalidArgument("box needs finite coordinates and positive size"));
        }
        Ok(b)
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Self::new(cx - width / 2.0, cy - height / 2.0, width, height)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.width / 2.0, self.y + self.height / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Intersection over union; 0 for disjoint boxes.
    pub fn iou(&self, other: &Self) -> f64 {
        let iw = (self.x + self.width).min(other.x + other.width) - self.x.max(other.x);
        let ih = (self.y + self.height).min(other.y + other.height) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }

    /// Intersection with the frame, kept at least one pixel wide and high.
    pub fn clamped(&self, frame_width: usize, frame_height: usize) -> Self {
        let clamp_axis = |start: f64, len: f64, limit: f64| {
            let lo = start.clamp(0.0, (limit - 1.0).max(0.0));
            let hi = (start + len).clamp(lo + 1.0, limit.max(lo + 1.0));
            (lo, hi - lo)
        };
        let (x, width) = clamp_axis(self.x, self.width, frame_width as f64);
        let (y, height) = clamp_axis(self.y, self.height, frame_height as f64);
        Self { x, y, width, height }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub features: FeatureConfig,
    /// Side of the square feature grid, in cells.
    pub grid_size: usize,
    /// Crop side relative to `sqrt(W * H)` of the target.
    pub padding: f64,
    pub scales: Vec<f64>,
    /// Label bandwidth in cells; derived from the target size when `None`.
    pub label_sigma: Option<f64>,
    pub init_iterations: usize,
    pub init_tolerance: f64,
    /// Multiply responses by the cosine window before taking the maximum.
    pub window_response: bool,
    /// Factor on responses of every scale other than 1.
    pub scale_penalty: f64,
    /// Interpolate the response peak between cells.
    pub subcell_refine: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            grid_size: 64,
            padding: 5.0,
            scales: (-2..=2).map(|i| math::powf(1.01, i as f64)).collect(),
            label_sigma: None,
            init_iterations: 100,
            init_tolerance: 1e-6,
            window_response: true,
            scale_penalty: 0.98,
            subcell_refine: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.grid_size < 2 {
            return Err(Error::InvalidArgument("feature grid must be at least 2x2"));
        }
        if !(self.padding > 0.0) || self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("padding and scales must be positive"));
        }
        if !(self.scale_penalty > 0.0 && self.scale_penalty <= 1.0) {
            return Err(Error::InvalidArgument("scale penalty must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Pixel side of the resampled patch.
    pub fn patch_pixels(&self) -> usize {
        self.grid_size * self.features.cell_size
    }

    /// Side in source pixels of the square crop around a `width x height` target.
    pub fn crop_side(&self, width: f64, height: f64) -> f64 {
        self.padding * math::sqrt(width * height)
    }

    /// Target extent in feature cells (rows, cols), before rounding.
    pub fn target_cells_exact(&self, width: f64, height: f64) -> (f64, f64) {
        let per_pixel = self.grid_size as f64 / self.crop_side(width, height);
        (height * per_pixel, width * per_pixel)
    }

    /// Support of the filter: the target extent rounded to whole cells.
    pub fn target_cells(&self, width: f64, height: f64) -> Result<(usize, usize)> {
        let (rows, cols) = self.target_cells_exact(width, height);
        let (rows, cols) = (math::round(rows) as usize, math::round(cols) as usize);
        if rows < 2 || cols < 2 {
            return Err(Error::DegenerateTarget);
        }
        Ok((rows.min(self.grid_size), cols.min(self.grid_size)))
    }

    /// Binary crop operator for a target of the given pixel size.
    pub fn mask_for(&self, width: f64, height: f64) -> Result<CropOperator> {
        let (rows, cols) = self.target_cells(width, height)?;
        CropOperator::centered(self.grid_size, self.grid_size, rows, cols)
    }

    pub fn sigma_for(&self, width: f64, height: f64) -> f64 {
        self.label_sigma.unwrap_or_else(|| {
            let (rows, cols) = self.target_cells_exact(width, height);
            default_label_sigma(rows, cols)
        })
    }

    /// Grid cell holding the label peak and the crop center.
    pub fn center_cell(&self) -> usize {
        self.grid_size / 2
    }

    /// Label peaked at `(center + d_row, center + d_col)` cells, wrapped onto the grid.
    pub fn label(&self, sigma: f64, d_row: f64, d_col: f64) -> Result<RealTensor3> {
        let m = self.grid_size as f64;
        let wrap = |v: f64| v - m * math::floor(v / m);
        let c = self.center_cell() as f64;
        gaussian_label(self.grid_size, self.grid_size, wrap(c + d_row), wrap(c + d_col), sigma)
    }
}

/// Everything needed to track: configuration plus learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerModel {
    pub config: TrackerConfig,
    pub updater: UpdaterParams,
    pub layer: Option<ConvLayerParams>,
}

impl TrackerModel {
    /// Untrained model: `stages` copies of the initial stage parameters and
    /// the default layer, for targets of the given size.
    pub fn initial(config: TrackerConfig, target_width: f64, target_height: f64, stages: usize) -> Result<Self> {
        config.validate()?;
        let mask = config.mask_for(target_width, target_height)?;
        let updater = UpdaterParams::repeated(StageParams::initial(mask), stages)?;
        let layer = if config.features.learnable { Some(ConvLayerParams::for_config(&config.features)?) } else { None };
        Ok(Self { config, updater, layer })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub center_x: f64,
    pub center_y: f64,
    /// Target size at scale 1.
    pub base_width: f64,
    pub base_height: f64,
    pub scale: f64,
    pub filter: RealTensor3,
    pub frame_index: usize,
    pub model: TrackerModel,
    label_sigma: f64,
    response_window: RealTensor3,
}

impl TrackerState {
    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox {
            x: self.center_x - self.base_width * self.scale / 2.0,
            y: self.center_y - self.base_height * self.scale / 2.0,
            width: self.base_width * self.scale,
            height: self.base_height * self.scale,
        }
    }

    fn features_at(&self, frame: &GrayImage, scale: f64) -> Result<RealTensor3> {
        let cfg = &self.model.config;
        let side = cfg.crop_side(self.base_width, self.base_height) * scale;
        let px = cfg.patch_pixels();
        let patch = frame.crop_resized(self.center_x, self.center_y, side, side, px, px)?;
        extract_features(&patch, &cfg.features, self.model.layer.as_ref())
    }

    /// Moves the state to a located position and scale.
    pub fn apply(&mut self, location: &Location) {
        self.center_x = location.center_x;
        self.center_y = location.center_y;
        self.scale = location.scale;
    }
}

/// Result of [`locate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub center_x: f64,
    pub center_y: f64,
    pub scale: f64,
    pub peak: f64,
    pub scale_index: usize,
    /// Displacement of the response peak from the grid center, in cells.
    pub cell_shift: (isize, isize),
}

/// Fits the first filter on the annotated frame.
pub fn init_first_frame(frame: &GrayImage, gt: &BoundingBox, model: &TrackerModel) -> Result<TrackerState> {
    let cfg = &model.config;
    cfg.validate()?;
    let (cx, cy) = gt.center();
    if !(0.0..=frame.width() as f64).contains(&cx) || !(0.0..=frame.height() as f64).contains(&cy) {
        return Err(Error::BoxOutsideFrame);
    }
    let geometry = cfg.mask_for(gt.width, gt.height)?;
    model.updater.validate()?;
    let mask = &model.updater.stages[0].mask;
    if mask.full_shape(1) != geometry.full_shape(1) {
        return Err(Error::InvalidArgument("updater grid does not match the tracker grid"));
    }
    let mut state = TrackerState {
        center_x: cx,
        center_y: cy,
        base_width: gt.width,
        base_height: gt.height,
        scale: 1.0,
        filter: RealTensor3::zeros(mask.full_shape(cfg.features.channels())),
        frame_index: 0,
        model: model.clone(),
        label_sigma: cfg.sigma_for(gt.width, gt.height),
        response_window: centered_window(cfg.grid_size, cfg.grid_size)?,
    };
    let z = state.features_at(frame, 1.0)?;
    let y = cfg.label(state.label_sigma, 0.0, 0.0)?;
    let binary = CropOperator::centered(cfg.grid_size, cfg.grid_size, mask.crop_shape(1).height, mask.crop_shape(1).width)?;
    state.filter = admm_solve(&z, &y, &StageParams::initial(binary), cfg.init_iterations, cfg.init_tolerance)?.f;
    Ok(state)
}

/// Finds the response maximum over all scales. Ties go to the smallest scale
/// index, then to the first cell in row-major order of the displacement
/// (zero displacement first, wrapping around the grid).
pub fn locate(state: &TrackerState, frame: &GrayImage) -> Result<Location> {
    let cfg = &state.model.config;
    let m = cfg.grid_size;
    let c = cfg.center_cell();
    let mut best: Option<(f64, usize, usize, usize)> = None;
    let mut responses = Vec::with_capacity(cfg.scales.len());
    for (si, &s) in cfg.scales.iter().enumerate() {
        let z = state.features_at(frame, state.scale * s)?;
        let mut response = Correlator::new(&z).response(&state.filter)?;
        if cfg.window_response {
            for (v, w) in response.as_mut_slice().iter_mut().zip(state.response_window.as_slice()) {
                *v *= w;
            }
        }
        if s != 1.0 {
            response.as_mut_slice().iter_mut().for_each(|v| *v *= cfg.scale_penalty);
        }
        for dr in 0..m {
            let r = (c + dr) % m;
            for dc in 0..m {
                let col = (c + dc) % m;
                let v = response[(r, col, 0)];
                if best.is_none_or(|(b, ..)| v > b) {
                    best = Some((v, si, r, col));
                }
            }
        }
        responses.push(response);
    }
    let (peak, si, r, col) = best.expect("scale set is non-empty");
    let s = cfg.scales[si];
    let (dr, dc) = (r as isize - c as isize, col as isize - c as isize);
    let (fr, fc) = if cfg.subcell_refine { subcell_offset(&responses[si], r, col) } else { (0.0, 0.0) };
    let side = cfg.crop_side(state.base_width, state.base_height) * state.scale * s;
    let px_per_cell = side / m as f64;
    Ok(Location {
        center_x: (state.center_x + (dc as f64 + fc) * px_per_cell).clamp(0.0, frame.width() as f64),
        center_y: (state.center_y + (dr as f64 + fr) * px_per_cell).clamp(0.0, frame.height() as f64),
        scale: (state.scale * s).clamp(0.1, 10.0),
        peak,
        scale_index: si,
        cell_shift: (dr, dc),
    })
}

/// Vertex of the parabola through the peak and its two circular neighbours,
/// per axis, clamped to half a cell. Zero where the peak is not strict.
fn subcell_offset(response: &RealTensor3, r: usize, c: usize) -> (f64, f64) {
    let (m, n) = (response.shape().height, response.shape().width);
    let vertex = |prev: f64, mid: f64, next: f64| {
        let curvature = prev - 2.0 * mid + next;
        if curvature < 0.0 { (0.5 * (prev - next) / curvature).clamp(-0.5, 0.5) } else { 0.0 }
    };
    let v = response[(r, c, 0)];
    (
        vertex(response[((r + m - 1) % m, c, 0)], v, response[((r + 1) % m, c, 0)]),
        vertex(response[(r, (c + n - 1) % n, 0)], v, response[(r, (c + 1) % n, 0)]),
    )
}

/// Refits the filter at the current (located) position with a centered
/// label and advances the frame counter.
pub fn update_model(state: &TrackerState, frame: &GrayImage) -> Result<TrackerState> {
    let cfg = &state.model.config;
    let z = state.features_at(frame, state.scale)?;
    let y = cfg.label(state.label_sigma, 0.0, 0.0)?;
    let (outputs, _) = forward(&z, &y, &state.filter, &state.model.updater)?;
    let mut next = state.clone();
    next.filter = outputs.last().clone();
    next.frame_index += 1;
    Ok(next)
}

/// Tracks a whole sequence; the first box is the ground truth itself.
pub fn track_sequence(frames: &[GrayImage], gt_first: &BoundingBox, model: &TrackerModel) -> Result<Vec<BoundingBox>> {
    let first = frames.first().ok_or(Error::InvalidArgument("sequence has no frames"))?;
    let mut state = init_first_frame(first, gt_first, model)?;
    let mut boxes = vec![*gt_first];
    for frame in &frames[1..] {
        let loc = locate(&state, frame)?;
        state.apply(&loc);
        state = update_model(&state, frame)?;
        boxes.push(state.bounding_box().clamped(frame.width(), frame.height()));
    }
    Ok(boxes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::representor::FeatureRecipe;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(width: usize, height: usize, seed: u64) -> Vec<f64> {
        // smooth random texture: sum of a few random sinusoids
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64)> =
            (0..12).map(|_| (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(0.0..6.3))).collect();
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v: f64 = waves.iter().map(|(a, b, p)| libm::sin(a * x as f64 + b * y as f64 + p)).sum();
                out.push(0.5 + v / 24.0);
            }
        }
        out
    }

    fn small_config() -> TrackerConfig {
        TrackerConfig {
            features: FeatureConfig { recipe: FeatureRecipe::Gray, out_channels: 2, ..FeatureConfig::default() },
            grid_size: 32,
            ..TrackerConfig::default()
        }
    }

    fn shifted(tex: &[f64], width: usize, height: usize, dx: isize, dy: isize) -> GrayImage {
        GrayImage::from_fn(width - 40, height - 40, |x, y| {
            let sx = (x as isize + 20 - dx) as usize;
            let sy = (y as isize + 20 - dy) as usize;
            tex[sy * width + sx]
        })
    }

    #[test]
    fn iou_and_clamping() {
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BoundingBox::new(1.0, 0.0, 2.0, 2.0).unwrap();
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&BoundingBox::new(5.0, 5.0, 1.0, 1.0).unwrap()), 0.0);
        let c = BoundingBox::new(-5.0, 8.0, 10.0, 10.0).unwrap().clamped(10, 10);
        assert_eq!((c.x, c.y, c.width, c.height), (0.0, 8.0, 5.0, 2.0));
        let far = BoundingBox::new(50.0, 50.0, 3.0, 3.0).unwrap().clamped(10, 10);
        assert!(far.width > 0.0 && far.height > 0.0 && far.x + far.width <= 10.0);
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn init_self_match_and_shift() {
        let cfg = small_config();
        let (w, h) = (280, 260);
        let tex = texture(w, h, 1);
        // crop side 5 * 25.6 = 128 = patch pixels, so one cell is 4 source pixels
        let frame = shifted(&tex, w, h, 0, 0);
        let gt = BoundingBox::from_center(110.0, 100.0, 25.6, 25.6).unwrap();
        let model = TrackerModel::initial(cfg.clone(), 25.6, 25.6, 2).unwrap();
        let state = init_first_frame(&frame, &gt, &model).unwrap();
        let again = init_first_frame(&frame, &gt, &model).unwrap();
        assert_eq!(state.filter, again.filter);

        // training response peaks at the label peak
        let z = state.features_at(&frame, 1.0).unwrap();
        let r = Correlator::new(&z).response(&state.filter).unwrap();
        let argmax = (0..r.len()).max_by(|&a, &b| r.as_slice()[a].total_cmp(&r.as_slice()[b])).unwrap();
        assert_eq!(argmax, 16 * 32 + 16);

        let loc = locate(&state, &frame).unwrap();
        assert_eq!(loc.cell_shift, (0, 0));
        assert_eq!(loc.scale, 1.0);

        let moved = shifted(&tex, w, h, 8, 0);
        let loc = locate(&state, &moved).unwrap();
        assert_eq!(loc.cell_shift, (0, 2));
        assert!((loc.center_x - 118.0).abs() < 1.0, "{}", loc.center_x);
        assert!((loc.center_y - 100.0).abs() < 1.0, "{}", loc.center_y);

        // half a cell: only the interpolated peak sees it
        let moved = shifted(&tex, w, h, 2, 0);
        let loc = locate(&state, &moved).unwrap();
        assert!((loc.center_x - 112.0).abs() < 1.0, "{}", loc.center_x);
        let coarse = TrackerState {
            model: TrackerModel { config: TrackerConfig { subcell_refine: false, ..cfg }, ..model },
            ..state
        };
        let loc = locate(&coarse, &moved).unwrap();
        assert!(loc.center_x == 110.0 || loc.center_x == 114.0);
    }

    #[test]
    fn blank_frame_keeps_position() {
        let cfg = small_config();
        let tex = texture(200, 200, 2);
        let frame = GrayImage::new(200, 200, tex).unwrap();
        let gt = BoundingBox::from_center(100.0, 100.0, 25.6, 25.6).unwrap();
        let model = TrackerModel::initial(cfg, 25.6, 25.6, 1).unwrap();
        let state = init_first_frame(&frame, &gt, &model).unwrap();
        let blank = GrayImage::from_fn(200, 200, |_, _| 0.3);
        let loc = locate(&state, &blank).unwrap();
        assert_eq!(loc.peak, 0.0);
        assert_eq!((loc.center_x, loc.center_y), (100.0, 100.0));
    }

    #[test]
    fn degenerate_and_outside_targets_rejected() {
        let cfg = small_config();
        // the target always spans grid / padding cells: 1 x 1 on a 5-cell grid
        let tiny = TrackerConfig { grid_size: 5, ..small_config() };
        assert!(matches!(tiny.target_cells(10.0, 10.0), Err(Error::DegenerateTarget)));
        let frame = GrayImage::from_fn(100, 100, |x, _| x as f64 / 100.0);
        let model = TrackerModel::initial(cfg, 20.0, 20.0, 1).unwrap();
        let gt = BoundingBox::new(150.0, 10.0, 20.0, 20.0).unwrap();
        assert!(matches!(init_first_frame(&frame, &gt, &model), Err(Error::BoxOutsideFrame)));
    }

    #[test]
    fn zero_rates_keep_filter_and_identical_stages_match_admm() {
        let cfg = small_config();
        let tex = texture(200, 200, 3);
        let frame = GrayImage::new(200, 200, tex).unwrap();
        let gt = BoundingBox::from_center(90.0, 110.0, 25.6, 25.6).unwrap();
        let mut model = TrackerModel::initial(cfg.clone(), 25.6, 25.6, 2).unwrap();
        for s in &mut model.updater.stages {
            s.eta = 0.0;
        }
        let state = init_first_frame(&frame, &gt, &model).unwrap();
        assert_eq!(update_model(&state, &frame).unwrap().filter, state.filter);

        let stage = StageParams { eta: 0.3, ..model.updater.stages[0].clone() };
        model.updater = UpdaterParams::repeated(stage.clone(), 3).unwrap();
        let state = init_first_frame(&frame, &gt, &model).unwrap();
        let next = update_model(&state, &frame).unwrap();
        let z = state.features_at(&frame, 1.0).unwrap();
        let y = cfg.label(state.label_sigma, 0.0, 0.0).unwrap();
        let solved = admm_solve(&z, &y, &stage, 3, f64::MIN_POSITIVE).unwrap().f;
        let expect = crate::bacf::interpolate(&state.filter, &solved, 0.3).unwrap();
        assert!(next.filter.sub(&expect).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn single_frame_sequence() {
        let frame = GrayImage::new(200, 200, texture(200, 200, 4)).unwrap();
        let gt = BoundingBox::from_center(100.0, 100.0, 30.0, 24.0).unwrap();
        let model = TrackerModel::initial(small_config(), 30.0, 24.0, 2).unwrap();
        assert_eq!(track_sequence(&[frame], &gt, &model).unwrap(), vec![gt]);
    }
}
