//! Dense Gaussian process inference.
//!
//! Used directly by the subset-of-data models and as the reference every
//! sparse approximation is checked against.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::{Dataset, Point};
use crate::kernels::{kernel_diag, kernel_grad, kernel_matrix, HyperParams, KernelKind};
use crate::linalg::{self, Chol};

/// Predictive distribution at a set of test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GpPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GpPosterior {
    /// Prior at `n` points with mean `c` and variance `var`.
    pub fn prior(n: usize, c: f64, var: f64) -> Self {
        Self { mean: DVector::from_element(n, c), cov: DMatrix::from_diagonal_element(n, n, var) }
    }

    pub fn variance(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Symmetrizes and clamps tiny negative diagonal entries to zero.
    pub(crate) fn tidy(mut self) -> Self {
        let n = self.cov.nrows();
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (self.cov[(i, j)] + self.cov[(j, i)]);
                self.cov[(i, j)] = v;
                self.cov[(j, i)] = v;
            }
            let d = self.cov[(i, i)];
            if (-1e-8..0.0).contains(&d) {
                self.cov[(i, i)] = 0.0;
            }
        }
        self
    }
}

/// Cached factorization of `K_y = K + sigma_n^2 I` and the weights
/// `alpha = K_y^{-1} (y - m)`.
#[derive(Debug, Clone)]
pub struct FitState {
    kind: KernelKind,
    hyper: HyperParams,
    inputs: Vec<Point>,
    y0: DVector<f64>,
    chol: Option<Chol>,
    alpha: DVector<f64>,
}

pub fn fit(kind: KernelKind, h: &HyperParams, data: &Dataset) -> Result<FitState> {
    fit_points(kind, h, &data.inputs(), &data.targets())
}

pub fn fit_points(kind: KernelKind, h: &HyperParams, inputs: &[Point], targets: &[f64]) -> Result<FitState> {
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
    }
    let y0 = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - h.mean_c));
    if inputs.is_empty() {
        kernel_diag(kind, h, inputs)?;
        return Ok(FitState { kind, hyper: h.clone(), inputs: Vec::new(), y0, chol: None, alpha: DVector::zeros(0) });
    }
    let mut ky = kernel_matrix(kind, h, inputs, inputs)?;
    linalg::add_diag(&mut ky, h.sigma_n2() + h.jitter());
    let chol = linalg::cholesky(ky)?;
    let alpha = chol.solve(&y0);
    Ok(FitState { kind, hyper: h.clone(), inputs: inputs.to_vec(), y0, chol: Some(chol), alpha })
}

impl FitState {
    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Posterior mean and full covariance at `test`.
    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        let h = &self.hyper;
        let kss = kernel_matrix(self.kind, h, test, test)?;
        let Some(chol) = &self.chol else {
            return Ok(GpPosterior { mean: DVector::from_element(test.len(), h.mean_c), cov: kss }.tidy());
        };
        let ks = kernel_matrix(self.kind, h, &self.inputs, test)?;
        let mean = ks.tr_mul(&self.alpha).add_scalar(h.mean_c);
        let v = linalg::solve_lower(chol, &ks);
        let cov = kss - v.tr_mul(&v);
        Ok(GpPosterior { mean, cov }.tidy())
    }

    /// Posterior mean only.
    pub fn predict_mean(&self, test: &[Point]) -> Result<DVector<f64>> {
        if self.chol.is_none() {
            return Ok(DVector::from_element(test.len(), self.hyper.mean_c));
        }
        let ks = kernel_matrix(self.kind, &self.hyper, &self.inputs, test)?;
        Ok(ks.tr_mul(&self.alpha).add_scalar(self.hyper.mean_c))
    }

    /// Posterior mean and marginal variances, without the full covariance.
    pub fn predict_marginals(&self, test: &[Point]) -> Result<(DVector<f64>, DVector<f64>)> {
        let prior = kernel_diag(self.kind, &self.hyper, test)?;
        let Some(chol) = &self.chol else {
            return Ok((DVector::from_element(test.len(), self.hyper.mean_c), prior));
        };
        let ks = kernel_matrix(self.kind, &self.hyper, &self.inputs, test)?;
        let mean = ks.tr_mul(&self.alpha).add_scalar(self.hyper.mean_c);
        let v = linalg::solve_lower(chol, &ks);
        let var = prior - linalg::col_sq_norms(&v);
        Ok((mean, var.map(|x| x.max(0.0))))
    }

    /// `-1/2 y0' K_y^{-1} y0 - 1/2 ln|K_y| - n/2 ln(2 pi)`.
    pub fn log_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else {
            return 0.0;
        };
        let n = self.inputs.len() as f64;
        -0.5 * self.y0.dot(&self.alpha) - 0.5 * linalg::log_det(chol) - 0.5 * n * (2.0 * PI).ln()
    }

    /// Gradient of [`FitState::log_likelihood`] over the flat hyperparameter
    /// vector, via `dL = 1/2 tr((alpha alpha' - K_y^{-1}) dK)`.
    pub fn grad_log_likelihood(&self) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let layout = h.layout();
        let mut grad = vec![0.0; layout.len()];
        let Some(chol) = &self.chol else {
            return Ok(grad);
        };
        // W = K_y^{-1} - alpha alpha'
        let mut w = chol.inverse();
        w.ger(-1.0, &self.alpha, &self.alpha, 1.0);
        let trace_w = w.trace();

        let dk = kernel_grad(self.kind, h, &self.inputs, &self.inputs)?;
        for (idx, d) in dk.iter().enumerate() {
            if let Some(d) = d {
                grad[idx] = -0.5 * linalg::frobenius_dot(&w, d);
            }
        }
        // jitter scales with sigma_f^2
        for idx in layout.amplitude.clone() {
            grad[idx] -= h.jitter() * trace_w;
        }
        grad[layout.noise] = -h.sigma_n2() * trace_w;
        grad[layout.mean] = self.alpha.sum();
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Polarity;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(pts: &[Point], ys: &[f64]) -> Dataset {
        Dataset::from_pairs(pts, ys, Polarity::Negative).unwrap()
    }

    #[test]
    fn scalar_alpha() {
        let h = HyperParams::new(0.4, 0.9, &[1.0], 0.2);
        let s = fit(KernelKind::SeIso, &h, &dataset(&[[1.0, 2.0]], &[1.5])).unwrap();
        let expected = (1.5 - 0.4) / (h.sigma_f2() + h.sigma_n2());
        assert!((s.alpha()[0] - expected).abs() < 1e-9 * expected.abs());
    }

    #[test]
    fn duplicate_inputs_are_fine_with_noise() {
        let h = HyperParams::new(0.0, 1.0, &[1.0], 0.1);
        let d = dataset(&[[1.0, 1.0], [1.0, 1.0]], &[0.3, 0.35]);
        assert!(fit(KernelKind::SeIso, &h, &d).is_ok());
    }

    #[test]
    fn empty_data_is_prior() {
        let h = HyperParams::new(0.7, 1.3, &[1.0], 0.1);
        let s = fit(KernelKind::SeIso, &h, &Dataset::new(Polarity::Positive)).unwrap();
        let p = s.predict(&[[0.0, 0.0], [4.0, 1.0]]).unwrap();
        assert!(p.mean.iter().all(|&m| m == 0.7));
        assert!(p.variance().iter().all(|&v| (v - h.sigma_f2()).abs() < 1e-15));
    }

    #[test]
    fn interpolates_with_tiny_noise() {
        let h = HyperParams::new(0.0, 1.0, &[1.0], 1e-6);
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.5]];
        let ys = [0.3, -0.2, 0.8];
        let s = fit(KernelKind::SeIso, &h, &dataset(&pts, &ys)).unwrap();
        let p = s.predict(&[[1.0, 0.0]]).unwrap();
        assert!((p.mean[0] + 0.2).abs() < 1e-3);
    }

    #[test]
    fn scalar_likelihood() {
        let h = HyperParams::new(0.25, 0.8, &[1.0], 0.3);
        let s = fit(KernelKind::SeIso, &h, &dataset(&[[0.0, 0.0]], &[0.25])).unwrap();
        let expected = -0.5 * (h.sigma_f2() + h.sigma_n2()).ln() - 0.5 * (2.0 * PI).ln();
        assert!((s.log_likelihood() - expected).abs() < 1e-9);
    }

    #[test]
    fn likelihood_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point> = (0..8).map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)]).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = HyperParams::new(0.1, 0.7, &[1.2, 0.9], 0.1);
        let a = fit(KernelKind::SeArd, &h, &dataset(&pts, &ys)).unwrap().log_likelihood();
        let mut order: Vec<usize> = (0..8).collect();
        order.reverse();
        order.swap(2, 5);
        let p2: Vec<Point> = order.iter().map(|&i| pts[i]).collect();
        let y2: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
        let b = fit(KernelKind::SeArd, &h, &dataset(&p2, &y2)).unwrap().log_likelihood();
        assert!((a - b).abs() < 1e-12);
    }
}
