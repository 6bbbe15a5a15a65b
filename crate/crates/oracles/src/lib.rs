//! Brute-force reference computations for tests.
//!
//! Nothing here depends on the production crates: inputs are flat slices in
//! channel-planar layout, i.e. element `(row, col, channel)` of an
//! `m x n x L` tensor lives at `(channel * m + row) * n + col`. Every routine
//! is written directly from its mathematical definition with dense loops or
//! dense matrices so it can serve as an independent check.

pub mod dft {
    use std::f64::consts::PI;

    /// Direct O((mn)^2) 2-D DFT of one real `m x n` plane, returned as
    /// `(re, im)` pairs in row-major order.
    pub fn naive_dft2(plane: &[f64], m: usize, n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(m * n);
        for ku in 0..m {
            for kv in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for r in 0..m {
                    for c in 0..n {
                        let angle = -2.0
                            * PI
                            * (((ku * r) % m) as f64 / m as f64 + ((kv * c) % n) as f64 / n as f64);
                        re += plane[r * n + c] * angle.cos();
                        im += plane[r * n + c] * angle.sin();
                    }
                }
                out.push((re, im));
            }
        }
        out
    }
}

pub mod spatial {
    /// `r(u, v) = sum_l sum_{x, y} z_l((x + u) mod m, (y + v) mod n) f_l(x, y)`
    pub fn cross_correlate(z: &[f64], f: &[f64], m: usize, n: usize, channels: usize) -> Vec<f64> {
        let mut r = vec![0.0; m * n];
        for u in 0..m {
            for v in 0..n {
                let mut acc = 0.0;
                for l in 0..channels {
                    for x in 0..m {
                        for y in 0..n {
                            let zi = (l * m + (x + u) % m) * n + (y + v) % n;
                            acc += z[zi] * f[(l * m + x) * n + y];
                        }
                    }
                }
                r[u * n + v] = acc;
            }
        }
        r
    }

    /// `0.5 * ||y - sum_l z_l * f_l||^2`
    pub fn data_term(z: &[f64], f: &[f64], y: &[f64], m: usize, n: usize, channels: usize) -> f64 {
        let r = cross_correlate(z, f, m, n, channels);
        0.5 * y.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    }

    /// Same-size zero-padded 2-D correlation of a `C_in`-channel input with a
    /// `k x k x C_in x C_out` kernel (index `((a * k + b) * C_in + i) * C_out + o`)
    /// plus bias, without any nonlinearity.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d_same(
        input: &[f64],
        m: usize,
        n: usize,
        c_in: usize,
        kernel: &[f64],
        bias: &[f64],
        k: usize,
        c_out: usize,
    ) -> Vec<f64> {
        let half = (k / 2) as isize;
        let mut out = vec![0.0; m * n * c_out];
        for o in 0..c_out {
            for r in 0..m {
                for c in 0..n {
                    let mut acc = bias[o];
                    for a in 0..k {
                        for b in 0..k {
                            let rr = r as isize + a as isize - half;
                            let cc = c as isize + b as isize - half;
                            if rr < 0 || cc < 0 || rr >= m as isize || cc >= n as isize {
                                continue;
                            }
                            for i in 0..c_in {
                                acc += kernel[((a * k + b) * c_in + i) * c_out + o]
                                    * input[(i * m + rr as usize) * n + cc as usize];
                            }
                        }
                    }
                    out[(o * m + r) * n + c] = acc;
                }
            }
        }
        out
    }
}

pub mod dense {
    //! Dense matrix formulations of the BACF operators.

    use nalgebra::{DMatrix, DVector};

    /// Geometry of a crop window with per-cell weights (`weights` is
    /// `crop_h x crop_w`, row-major).
    #[derive(Debug, Clone)]
    pub struct Crop {
        pub m: usize,
        pub n: usize,
        pub top: usize,
        pub left: usize,
        pub crop_h: usize,
        pub crop_w: usize,
        pub weights: Vec<f64>,
    }

    pub fn mat_vec(mat: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (mat * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    pub fn mat_t_vec(mat: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (mat.transpose() * DVector::from_column_slice(v)).as_slice().to_vec()
    }

    /// The `(D*L) x (T*L)` matrix `M (x) I_L` in channel-planar ordering.
    pub fn crop_matrix(crop: &Crop, channels: usize) -> DMatrix<f64> {
        let t = crop.m * crop.n;
        let d = crop.crop_h * crop.crop_w;
        let mut mat = DMatrix::zeros(d * channels, t * channels);
        for l in 0..channels {
            for i in 0..crop.crop_h {
                for j in 0..crop.crop_w {
                    let row = l * d + i * crop.crop_w + j;
                    let col = l * t + (crop.top + i) * crop.n + crop.left + j;
                    mat[(row, col)] = crop.weights[i * crop.crop_w + j];
                }
            }
        }
        mat
    }

    /// The `(m*n) x (m*n*L)` matrix of `f -> sum_l z_l * f_l`.
    pub fn correlation_matrix(z: &[f64], m: usize, n: usize, channels: usize) -> DMatrix<f64> {
        let t = m * n;
        let mut mat = DMatrix::zeros(t, t * channels);
        for u in 0..m {
            for v in 0..n {
                for l in 0..channels {
                    for x in 0..m {
                        for y in 0..n {
                            let zi = (l * m + (x + u) % m) * n + (y + v) % n;
                            mat[(u * n + v, l * t + x * n + y)] += z[zi];
                        }
                    }
                }
            }
        }
        mat
    }

    /// `(lambda I + rho (M M^T (x) I_L))^{-1} rho (M (x) I_L) (f + g)`
    pub fn h_solve(crop: &Crop, channels: usize, f_plus_g: &[f64], lambda: f64, rho: f64) -> Vec<f64> {
        let mm = crop_matrix(crop, channels);
        let dim = mm.nrows();
        let lhs = DMatrix::<f64>::identity(dim, dim) * lambda + (&mm * mm.transpose()) * rho;
        let rhs = (&mm * DVector::from_column_slice(f_plus_g)) * rho;
        lhs.lu().solve(&rhs).expect("h system is singular").as_slice().to_vec()
    }

    /// Least-squares solution of
    /// `min 0.5 ||y - C(z) f||^2 + rho/2 ||f - p||^2`
    /// through Householder QR of the stacked system
    /// `[C; sqrt(rho) I] f = [y; sqrt(rho) p]`.
    pub fn f_solve_least_squares(
        z: &[f64],
        y: &[f64],
        p: &[f64],
        rho: f64,
        m: usize,
        n: usize,
        channels: usize,
    ) -> Vec<f64> {
        let c = correlation_matrix(z, m, n, channels);
        let (rows, cols) = (c.nrows(), c.ncols());
        let s = rho.sqrt();
        let mut a = DMatrix::zeros(rows + cols, cols);
        let mut b = DVector::zeros(rows + cols);
        a.view_mut((0, 0), (rows, cols)).copy_from(&c);
        for i in 0..cols {
            a[(rows + i, i)] = s;
            b[rows + i] = s * p[i];
        }
        for i in 0..rows {
            b[i] = y[i];
        }
        let qr = a.qr();
        let qtb = qr.q().transpose() * b;
        qr.r().solve_upper_triangular(&qtb).expect("stacked system has full column rank").as_slice().to_vec()
    }

    /// Minimizer of the constrained problem
    /// `min 0.5 ||y - C(z) f||^2 + lambda/2 ||h||^2  s.t.  f = M^T h`,
    /// obtained by eliminating `f` and solving the normal equations in `h`.
    /// Returns `(f, h, objective)`.
    pub fn bacf_kkt(
        z: &[f64],
        y: &[f64],
        crop: &Crop,
        lambda: f64,
        m: usize,
        n: usize,
        channels: usize,
    ) -> (Vec<f64>, Vec<f64>, f64) {
        let c = correlation_matrix(z, m, n, channels);
        let mt = crop_matrix(crop, channels).transpose();
        let a = &c * &mt;
        let dim = a.ncols();
        let yv = DVector::from_column_slice(y);
        let lhs = a.transpose() * &a + DMatrix::<f64>::identity(dim, dim) * lambda;
        let rhs = a.transpose() * &yv;
        let h = lhs.cholesky().expect("KKT system not SPD").solve(&rhs);
        let f = &mt * &h;
        let resid = yv - &c * &f;
        let objective = 0.5 * resid.norm_squared() + 0.5 * lambda * h.norm_squared();
        (f.as_slice().to_vec(), h.as_slice().to_vec(), objective)
    }

    /// Solves a dense complex `L x L` system by Gaussian elimination; returns
    /// `None` for (numerically) singular matrices.
    pub fn complex_solve(a: &[(f64, f64)], b: &[(f64, f64)], dim: usize) -> Option<Vec<(f64, f64)>> {
        use nalgebra::Complex;
        let mat = DMatrix::from_fn(dim, dim, |i, j| Complex::new(a[i * dim + j].0, a[i * dim + j].1));
        let rhs = DVector::from_fn(dim, |i, _| Complex::new(b[i].0, b[i].1));
        mat.lu().solve(&rhs).map(|x| x.iter().map(|c| (c.re, c.im)).collect())
    }
}
