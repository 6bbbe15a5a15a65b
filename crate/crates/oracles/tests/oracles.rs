use bacf_oracles::dense::{self, Crop};
use bacf_oracles::{dft, spatial};

fn lcg(seed: u64, len: usize) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..len)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

#[test]
fn dft_of_delta_is_flat() {
    let mut plane = vec![0.0; 12];
    plane[0] = 1.0;
    for (re, im) in dft::naive_dft2(&plane, 3, 4) {
        assert!((re - 1.0).abs() < 1e-14 && im.abs() < 1e-14);
    }
}

#[test]
fn dft_parseval() {
    let (m, n) = (5, 3);
    let x = lcg(1, m * n);
    let energy: f64 = x.iter().map(|v| v * v).sum();
    let spectral: f64 = dft::naive_dft2(&x, m, n).iter().map(|(a, b)| a * a + b * b).sum();
    assert!((spectral / (m * n) as f64 - energy).abs() < 1e-12);
}

#[test]
fn correlation_matrix_agrees_with_loops() {
    let (m, n, l) = (4, 3, 2);
    let z = lcg(2, m * n * l);
    let f = lcg(3, m * n * l);
    let mat = dense::correlation_matrix(&z, m, n, l);
    let direct = spatial::cross_correlate(&z, &f, m, n, l);
    for (a, b) in dense::mat_vec(&mat, &f).iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn correlation_with_delta_filter_shifts() {
    let (m, n) = (3, 4);
    let z = lcg(4, m * n);
    let mut f = vec![0.0; m * n];
    f[n + 2] = 1.0; // (1, 2)
    let r = spatial::cross_correlate(&z, &f, m, n, 1);
    for u in 0..m {
        for v in 0..n {
            assert_eq!(r[u * n + v], z[((u + 1) % m) * n + (v + 2) % n]);
        }
    }
}

#[test]
fn binary_h_solve_is_scaled_crop() {
    let crop = Crop { m: 4, n: 4, top: 1, left: 1, crop_h: 2, crop_w: 2, weights: vec![1.0; 4] };
    let v = lcg(5, 16);
    let h = dense::h_solve(&crop, 1, &v, 1.0, 3.0);
    for (i, (r, c)) in [(1, 1), (1, 2), (2, 1), (2, 2)].into_iter().enumerate() {
        assert!((h[i] - 3.0 / 4.0 * v[r * 4 + c]).abs() < 1e-14);
    }
}

#[test]
fn least_squares_optimality() {
    let (m, n, l) = (3, 3, 2);
    let z = lcg(6, m * n * l);
    let y = lcg(7, m * n);
    let p = lcg(8, m * n * l);
    let rho = 0.7;
    let f = dense::f_solve_least_squares(&z, &y, &p, rho, m, n, l);
    let c = dense::correlation_matrix(&z, m, n, l);
    let resid: Vec<f64> = dense::mat_vec(&c, &f).iter().zip(&y).map(|(a, b)| a - b).collect();
    let grad = dense::mat_t_vec(&c, &resid);
    for i in 0..f.len() {
        assert!((grad[i] + rho * (f[i] - p[i])).abs() < 1e-12);
    }
}

#[test]
fn kkt_minimizer_respects_support() {
    let (m, n) = (4, 4);
    let crop = Crop { m, n, top: 0, left: 1, crop_h: 3, crop_w: 2, weights: vec![1.0; 6] };
    let (f, h, objective) = dense::bacf_kkt(&lcg(9, 16), &lcg(10, 16), &crop, 1.0, m, n, 1);
    assert_eq!(h.len(), 6);
    for r in 0..m {
        for c in 0..n {
            if !(r < 3 && (1..3).contains(&c)) {
                assert_eq!(f[r * n + c], 0.0);
            }
        }
    }
    assert!(objective.is_finite() && objective >= 0.0);
}
