#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sqdm_gp::grid::Point;
use sqdm_gp::Result;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Point> {
    (0..n).map(|_| [rng.random_range(0.0..span), rng.random_range(0.0..span)]).collect()
}

/// Uniform points in `[0, span]^2` with pairwise distance at least `min_dist`.
pub fn separated_points(rng: &mut ChaCha8Rng, n: usize, span: f64, min_dist: f64) -> Vec<Point> {
    let mut pts: Vec<Point> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [rng.random_range(0.0..span), rng.random_range(0.0..span)];
        if pts.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_dist) {
            pts.push(p);
        }
    }
    pts
}

pub fn random_targets(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn grid_points(nx: usize, ny: usize, px: f64, py: f64) -> Vec<Point> {
    (0..ny).flat_map(|j| (0..nx).map(move |i| [i as f64 * px, j as f64 * py])).collect()
}

/// Central differences of `f` around `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], eps: f64) -> Vec<f64> {
    (0..x.len())
        .map(|k| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[k] += eps;
            b[k] -= eps;
            (f(&a).unwrap() - f(&b).unwrap()) / (2.0 * eps)
        })
        .collect()
}

/// Largest componentwise error, relative to `max(|fd|, floor)`.
pub fn max_rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> f64 {
    analytic.iter().zip(fd).map(|(a, f)| (a - f).abs() / f.abs().max(floor)).fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Dense Gaussian log density via an independent Cholesky.
pub fn dense_log_density(cov: &DMatrix<f64>, y0: &DVector<f64>) -> f64 {
    let chol = cov.clone().cholesky().expect("oracle covariance must be PD");
    let alpha = chol.solve(y0);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * y0.dot(&alpha) - 0.5 * log_det - 0.5 * y0.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}
