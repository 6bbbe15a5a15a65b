//! Oracle suites: each check compares a fast routine against an independent
//! dense or brute-force computation on random instances.

use std::time::{Duration, Instant};

use bacf_oracles::dense;
use bacf_unroll::bacf::{admm_solve, constrained_objective, h_update, FrequencySolver};
use bacf_unroll::gradcheck::{finite_diff_check, GradCheckSetup};
use bacf_unroll::tracker::{init_first_frame, locate, TrackerModel};
use bacf_unroll::updater::forward;
use bacf_unroll::{
    BoundingBox, CropOperator, FilterVars, GrayImage, RealTensor3, Shape3, StageParams, TrackerConfig, UpdaterParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub limit: f64,
    pub instances: usize,
    pub elapsed: Duration,
    pub detail: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {}: worst {:.3e} (limit {:.0e}) over {} instances in {:.2?}{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.limit,
            self.instances,
            self.elapsed,
            if self.detail.is_empty() { String::new() } else { format!("; {}", self.detail) }
        )
    }
}

fn random_tensor(shape: Shape3, rng: &mut ChaCha8Rng) -> RealTensor3 {
    RealTensor3::from_fn(shape, |_, _, _| rng.random_range(-1.0..1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, m: usize, n: usize, weighted: bool) -> Result<CropOperator> {
    let dh = rng.random_range(1..=m);
    let dw = rng.random_range(1..=n);
    let top = rng.random_range(0..=m - dh);
    let left = rng.random_range(0..=n - dw);
    let mask = CropOperator::new(m, n, dh, dw, top, left)?;
    if !weighted {
        return Ok(mask);
    }
    let weights = (0..dh * dw).map(|_| rng.random_range(0.1..2.0)).collect();
    Ok(mask.with_weights(weights)?)
}

fn oracle_crop(mask: &CropOperator) -> dense::Crop {
    let full = mask.full_shape(1);
    let crop = mask.crop_shape(1);
    let (top, left) = mask.offset();
    dense::Crop {
        m: full.height,
        n: full.width,
        top,
        left,
        crop_h: crop.height,
        crop_w: crop.width,
        weights: mask.weights().to_vec(),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frequency-domain `f` solve against dense least squares; relative error.
pub fn f_subproblem(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (m, n, l) = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=3));
        let shape = Shape3::new(m, n, l);
        let z = random_tensor(shape, &mut rng);
        let y = random_tensor(Shape3::new(m, n, 1), &mut rng);
        let p = random_tensor(shape, &mut rng);
        let rho = rng.random_range(0.05..5.0);
        let fast = FrequencySolver::new(&z, &y)?.solve(&p, rho)?;
        let slow = dense::f_solve_least_squares(z.as_slice(), y.as_slice(), p.as_slice(), rho, m, n, l);
        let diff: Vec<f64> = fast.as_slice().iter().zip(&slow).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(&slow));
    }
    let elapsed = start.elapsed();
    let limit = 1e-7;
    Ok(CheckOutcome {
        name: "f-subproblem vs dense least squares",
        passed: worst <= limit && elapsed < Duration::from_secs(10),
        worst,
        limit,
        instances,
        elapsed,
        detail: String::new(),
    })
}

/// Elementwise `h` update against the dense `(lambda I + rho M M^T)` solve,
/// with non-binary mask weights.
pub fn h_subproblem(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for i in 0..instances {
        let (m, n, l) = (rng.random_range(2..=8), rng.random_range(2..=8), rng.random_range(1..=3));
        let mask = random_mask(&mut rng, m, n, i % 4 != 0)?;
        let p = StageParams { lambda: rng.random_range(0.01..3.0), rho: rng.random_range(0.05..5.0), eta: 0.5, mask };
        let vars = FilterVars {
            f: random_tensor(p.mask.full_shape(l), &mut rng),
            h: RealTensor3::zeros(p.mask.crop_shape(l)),
            g: random_tensor(p.mask.full_shape(l), &mut rng),
        };
        let fast = h_update(&vars, &p)?;
        let fg = vars.f.add(&vars.g)?;
        let slow = dense::h_solve(&oracle_crop(&p.mask), l, fg.as_slice(), p.lambda, p.rho);
        worst = worst.max(max_abs_diff(fast.as_slice(), &slow));
    }
    let limit = 1e-9;
    Ok(CheckOutcome {
        name: "h-subproblem vs dense solve",
        passed: worst <= limit,
        worst,
        limit,
        instances,
        elapsed: start.elapsed(),
        detail: String::new(),
    })
}

/// Penalty used by [`admm_kkt`]. With `rho = 1`, thin crops such as 1x3
/// still carry a primal residual near 3e-5 after 200 iterations.
pub const KKT_RHO: f64 = 3.0;

/// 200 ADMM iterations (`lambda = 1`, `rho = KKT_RHO`, random binary crop)
/// against the eliminated KKT system. `worst` is the largest `|f - f*|`;
/// objective gap and primal residual are checked too.
pub fn admm_kkt(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_f, mut worst_obj, mut worst_res) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let mask = random_mask(&mut rng, 4, 4, false)?;
        let p = StageParams { rho: KKT_RHO, ..StageParams::initial(mask) };
        let z = random_tensor(p.mask.full_shape(1), &mut rng);
        let y = random_tensor(p.mask.full_shape(1), &mut rng);
        let vars = admm_solve(&z, &y, &p, 200, f64::MIN_POSITIVE)?;
        let (f_star, _, obj_star) =
            dense::bacf_kkt(z.as_slice(), y.as_slice(), &oracle_crop(&p.mask), p.lambda, 4, 4, 1);
        worst_f = worst_f.max(max_abs_diff(vars.f.as_slice(), &f_star));
        worst_obj = worst_obj.max((constrained_objective(&z, &y, &vars.h, &p)? - obj_star).abs());
        worst_res = worst_res.max(vars.primal_residual(&p.mask)?);
    }
    let limit = 1e-5;
    Ok(CheckOutcome {
        name: "ADMM vs KKT minimizer",
        passed: worst_f <= limit && worst_obj <= 1e-8 && worst_res <= 1e-6,
        worst: worst_f,
        limit,
        instances,
        elapsed: start.elapsed(),
        detail: format!("objective gap {worst_obj:.3e} (limit 1e-8), primal residual {worst_res:.3e} (limit 1e-6)"),
    })
}

/// Finite differences for `K = 1, 2, 3`, `seeds` instances each. `worst` is
/// the largest scaled error.
pub fn gradient_fidelity(seeds: u64) -> CheckOutcome {
    let start = Instant::now();
    let (step, tol) = (1e-5, 1e-4);
    let (mut worst, mut entries, mut passed, mut detail) = (0.0f64, 0usize, true, String::new());
    for stages in 1..=3 {
        for seed in 0..seeds {
            // every tensor entry, not a sample
            let setup = GradCheckSetup { stages, seed, tensor_samples: usize::MAX, ..GradCheckSetup::default() };
            let report = finite_diff_check(&setup, step, tol);
            worst = worst.max(report.max_error);
            entries += report.entries.len();
            if !report.passed {
                passed = false;
                detail = format!("K={stages} seed={seed}: {}", report.summary());
            }
        }
    }
    let elapsed = start.elapsed();
    if detail.is_empty() {
        detail = format!("{entries} gradient entries");
    }
    CheckOutcome {
        name: "gradients vs central differences",
        passed: passed && elapsed < Duration::from_secs(60),
        worst,
        limit: tol,
        instances: 3 * seeds as usize,
        elapsed,
        detail,
    }
}

/// Unrolled stages with identical parameters and `eta = 1` against plain
/// ADMM truncated after the same number of iterations.
pub fn unrolling_consistency(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (m, n, l) = (rng.random_range(3..=8), rng.random_range(3..=8), rng.random_range(1..=3));
        let mask = random_mask(&mut rng, m, n, true)?;
        let stage = StageParams { lambda: rng.random_range(0.1..2.0), rho: rng.random_range(0.2..3.0), eta: 1.0, mask };
        let k = rng.random_range(1..=5);
        let params = UpdaterParams::repeated(stage.clone(), k)?;
        let z = random_tensor(stage.mask.full_shape(l), &mut rng);
        let y = random_tensor(stage.mask.full_shape(1), &mut rng);
        let f_prev = random_tensor(stage.mask.full_shape(l), &mut rng);
        let (out, _) = forward(&z, &y, &f_prev, &params)?;
        for (i, f) in out.filters.iter().enumerate() {
            let admm = admm_solve(&z, &y, &stage, i + 1, f64::MIN_POSITIVE)?;
            worst = worst.max(max_abs_diff(f.as_slice(), admm.f.as_slice()));
        }
    }
    let limit = 1e-12;
    Ok(CheckOutcome {
        name: "unrolled stages vs truncated ADMM",
        passed: worst <= limit,
        worst,
        limit,
        instances,
        elapsed: start.elapsed(),
        detail: String::new(),
    })
}

/// Largest center movement, in pixels, tolerated under filter scaling. The
/// sub-cell peak fit is a ratio of response differences, so it is scale-free
/// up to rounding.
pub const REFINED_CENTER_TOLERANCE: f64 = 1e-9;

/// `locate` on random frames and random filters, repeated with the filter
/// scaled by 0.1 and 10. `worst` counts decisions that changed: a different
/// scale or peak cell, or a refined center that moved by more than
/// `REFINED_CENTER_TOLERANCE`.
pub fn scale_invariance(states: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = TrackerConfig { grid_size: 16, ..TrackerConfig::default() };
    config.features.cell_size = 2;
    let model = TrackerModel::initial(config, 12.0, 12.0, 1)?;
    let (mut changed, mut drift) = (0usize, 0.0f64);
    for _ in 0..states {
        let (w, h) = (rng.random_range(48..96), rng.random_range(48..96));
        let frame = GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0..1.0));
        let next = GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0..1.0));
        let gt = BoundingBox::from_center(
            rng.random_range(10.0..w as f64 - 10.0),
            rng.random_range(10.0..h as f64 - 10.0),
            12.0,
            12.0,
        )?;
        let mut state = init_first_frame(&frame, &gt, &model)?;
        state.filter = random_tensor(state.filter.shape(), &mut rng);
        let base = locate(&state, &next)?;
        for c in [0.1, 10.0] {
            let mut scaled = state.clone();
            scaled.filter = state.filter.scaled(c);
            let loc = locate(&scaled, &next)?;
            let moved = f64::max((loc.center_x - base.center_x).abs(), (loc.center_y - base.center_y).abs());
            drift = drift.max(moved);
            let same = loc.scale_index == base.scale_index
                && loc.cell_shift == base.cell_shift
                && moved <= REFINED_CENTER_TOLERANCE;
            if !same {
                changed += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: "locate invariant to filter scaling",
        passed: changed == 0,
        worst: changed as f64,
        limit: 0.0,
        instances: states,
        elapsed: start.elapsed(),
        detail: format!("largest refined-center movement {drift:.1e} px"),
    })
}

/// Every suite at its acceptance size.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        f_subproblem(20, seed)?,
        h_subproblem(20, seed.wrapping_add(1))?,
        admm_kkt(10, seed.wrapping_add(2))?,
        gradient_fidelity(3),
        unrolling_consistency(20, seed.wrapping_add(3))?,
        scale_invariance(100, seed.wrapping_add(4))?,
    ])
}
