//! Sparse-spectrum GP regression: Bayesian linear regression on the
//! trigonometric features `[cos(2 pi s_r'x), sin(2 pi s_r'x)]`, `r = 1..m`,
//! with weight prior `N(0, sigma_f^2/m I)`.
//!
//! Everything is computed in the `2m`-dimensional feature space through the
//! Cholesky factor of `A = Phi'Phi + (s2 m / sigma_f^2) I`, where `s2` is the
//! noise variance plus the kernel jitter. The result is identical to dense
//! inference with the sparse-spectrum kernel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp_exact::GpPosterior;
use crate::grid::{Dataset, Point};
use crate::kernels::HyperParams;
use crate::linalg::{self, Chol};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone)]
pub struct SsgprState {
    hyper: HyperParams,
    inputs: Vec<Point>,
    y0: DVector<f64>,
    phi: DMatrix<f64>,
    chol_a: Chol,
    weight_mean: DVector<f64>,
    noise: f64,
}

/// `n x 2m` feature matrix, cosine block first.
pub fn features(freqs: &[Point], inputs: &[Point]) -> DMatrix<f64> {
    let m = freqs.len();
    let mut phi = DMatrix::zeros(inputs.len(), 2 * m);
    for (i, x) in inputs.iter().enumerate() {
        for (r, s) in freqs.iter().enumerate() {
            let arg = TWO_PI * (s[0] * x[0] + s[1] * x[1]);
            let (sin, cos) = arg.sin_cos();
            phi[(i, r)] = cos;
            phi[(i, m + r)] = sin;
        }
    }
    phi
}

pub fn ssgpr_fit(h: &HyperParams, data: &Dataset) -> Result<SsgprState> {
    ssgpr_fit_points(h, &data.inputs(), &data.targets())
}

pub fn ssgpr_fit_points(h: &HyperParams, inputs: &[Point], targets: &[f64]) -> Result<SsgprState> {
    let freqs = h
        .frequencies()
        .filter(|f| !f.is_empty())
        .ok_or_else(|| Error::InvalidArgument("SSGPR needs at least one spectral frequency".into()))?;
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
    }
    let m = freqs.len();
    let noise = h.sigma_n2() + h.jitter();
    let y0 = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - h.mean_c));
    let phi = features(freqs, inputs);
    let mut a = phi.transpose() * &phi;
    linalg::add_diag(&mut a, noise * m as f64 / h.sigma_f2());
    let chol_a = linalg::cholesky(a)?;
    let weight_mean = chol_a.solve(&phi.tr_mul(&y0));
    Ok(SsgprState { hyper: h.clone(), inputs: inputs.to_vec(), y0, phi, chol_a, weight_mean, noise })
}

impl SsgprState {
    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    fn freqs(&self) -> &[Point] {
        self.hyper.frequencies().unwrap_or(&[])
    }

    pub fn weight_mean(&self) -> &DVector<f64> {
        &self.weight_mean
    }

    /// Posterior weight covariance `s2 A^{-1}`.
    pub fn weight_cov(&self) -> DMatrix<f64> {
        self.chol_a.inverse() * self.noise
    }

    /// Latent (noise-free) predictive distribution.
    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        let phi_t = features(self.freqs(), test);
        let mean = (&phi_t * &self.weight_mean).add_scalar(self.hyper.mean_c);
        let v = linalg::solve_lower(&self.chol_a, &phi_t.transpose());
        let cov = v.tr_mul(&v) * self.noise;
        Ok(GpPosterior { mean, cov }.tidy())
    }

    pub fn predict_marginals(&self, test: &[Point]) -> Result<(DVector<f64>, DVector<f64>)> {
        let phi_t = features(self.freqs(), test);
        let mean = (&phi_t * &self.weight_mean).add_scalar(self.hyper.mean_c);
        let v = linalg::solve_lower(&self.chol_a, &phi_t.transpose());
        Ok((mean, linalg::col_sq_norms(&v) * self.noise))
    }

    pub fn log_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let m = self.freqs().len() as f64;
        let fit = self.y0.norm_squared() - self.y0.dot(&(&self.phi * &self.weight_mean));
        -0.5 / self.noise * fit - 0.5 * linalg::log_det(&self.chol_a)
            + m * (self.noise * m / self.hyper.sigma_f2()).ln()
            - 0.5 * n * (TWO_PI * self.noise).ln()
    }

    /// Gradient over `(c, log sigma_f, log l, log sigma_n, s_r)`; the length
    /// scale only seeds the frequencies, so its entry is zero.
    pub fn grad_log_likelihood(&self) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let layout = h.layout();
        let mut grad = vec![0.0; layout.len()];
        let n = self.inputs.len();
        let m = self.freqs().len();
        let lam = h.sigma_f2() / m as f64;
        let s2 = self.noise;

        // alpha = C^{-1} y0, C = lam Phi Phi' + s2 I
        let alpha = (&self.y0 - &self.phi * &self.weight_mean) / s2;
        let phi_alpha = self.phi.tr_mul(&alpha);
        // M = C^{-1} Phi = (Phi - Phi A^{-1} G) / s2 with G = A - c I,
        // which collapses to c Phi A^{-1} / s2
        let c = s2 * m as f64 / h.sigma_f2();
        let l_inv = linalg::lower_inverse(&self.chol_a);
        let a_inv = l_inv.transpose() * &l_inv;
        let mmat = (&self.phi * &a_inv) * (c / s2);
        let tr_cinv = (n as f64 - 2.0 * m as f64 + c * a_inv.trace()) / s2;

        grad[layout.mean] = alpha.sum();
        let tr_phi = linalg::frobenius_dot(&mmat, &self.phi);
        let jitter = h.jitter();
        grad[layout.amplitude.start] =
            lam * phi_alpha.norm_squared() - lam * tr_phi + jitter * alpha.norm_squared() - jitter * tr_cinv;
        grad[layout.noise] = h.sigma_n2() * (alpha.norm_squared() - tr_cinv);

        // H = alpha (Phi' alpha)' - M
        let base = layout.extras.start;
        for (r, s) in self.freqs().iter().enumerate() {
            let mut acc = [0.0; 2];
            for i in 0..n {
                let x = self.inputs[i];
                let arg = TWO_PI * (s[0] * x[0] + s[1] * x[1]);
                let (sin, cos) = arg.sin_cos();
                let h_cos = alpha[i] * phi_alpha[r] - mmat[(i, r)];
                let h_sin = alpha[i] * phi_alpha[m + r] - mmat[(i, m + r)];
                let common = -sin * h_cos + cos * h_sin;
                acc[0] += common * TWO_PI * x[0];
                acc[1] += common * TWO_PI * x[1];
            }
            grad[base + 2 * r] = lam * acc[0];
            grad[base + 2 * r + 1] = lam * acc[1];
        }
        Ok(grad)
    }
}
