//! Fully independent training conditional (FITC) approximation.
//!
//! Training targets are modelled as `y ~ N(m, Q + Lambda)` with
//! `Q = K_xz K_z^{-1} K_zx` and `Lambda = diag(K_y - Q)`, where `K_y` carries the same jitter as the exact GP. All algebra goes
//! through two Cholesky factors of size `m x m`:
//!
//! * `L_z`, the factor of `K_z` (plus jitter), and
//! * `L_b`, the factor of `B = I + V Lambda^{-1} V'` with `V = L_z^{-1} K_zx`,
//!
//! so the posterior weight covariance is `Sigma = L_z^{-T} B^{-1} L_z^{-1}`
//! and `ln|Q + Lambda| = ln|B| + sum ln Lambda`. Fitting, prediction and the
//! likelihood gradient (including the inducing coordinates) cost `O(n m^2)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gp_exact::GpPosterior;
use crate::grid::{Dataset, Point};
use crate::kernels::{kernel_diag, kernel_matrix, se_grad_wrt_second, HyperParams, KernelKind};
use crate::linalg::{self, Chol};

#[derive(Debug, Clone)]
pub struct FitcState {
    kind: KernelKind,
    hyper: HyperParams,
    inputs: Vec<Point>,
    inducing: Vec<Point>,
    y0: DVector<f64>,
    kzz: DMatrix<f64>,
    kzx: DMatrix<f64>,
    chol_z: Chol,
    v: DMatrix<f64>,
    lambda: DVector<f64>,
    clamped: Vec<bool>,
    chol_b: Chol,
    beta: DVector<f64>,
    /// `L_b^{-T} beta`; the mean is `c + (L_z^{-1} K_z*)' gamma`.
    gamma: DVector<f64>,
    weights: DVector<f64>,
}

/// Fits FITC with the inducing inputs stored in `h.extras`.
pub fn fitc_fit(kind: KernelKind, h: &HyperParams, data: &Dataset) -> Result<FitcState> {
    fit_impl(kind, h, &data.inputs(), &data.targets(), 1.0)
}

pub fn fitc_fit_points(kind: KernelKind, h: &HyperParams, inputs: &[Point], targets: &[f64]) -> Result<FitcState> {
    fit_impl(kind, h, inputs, targets, 1.0)
}

/// `lambda_sign = -1` flips the training-conditional diagonal; only the
/// fault-injection harness of the verification suite uses it.
pub(crate) fn fit_impl(
    kind: KernelKind,
    h: &HyperParams,
    inputs: &[Point],
    targets: &[f64],
    lambda_sign: f64,
) -> Result<FitcState> {
    if kind == KernelKind::SparseSpectrum {
        return Err(Error::InvalidArgument("FITC needs a squared-exponential kernel".into()));
    }
    let inducing = h
        .inducing()
        .ok_or_else(|| Error::InvalidArgument("FITC needs inducing inputs in the hyperparameters".into()))?
        .to_vec();
    if inducing.is_empty() || inputs.is_empty() {
        return Err(Error::InvalidArgument("FITC needs m >= 1 inducing and n >= 1 training points".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
    }
    let n = inputs.len();
    let jitter = h.jitter();
    let y0 = DVector::from_iterator(n, targets.iter().map(|y| y - h.mean_c));

    let mut kzz = kernel_matrix(kind, h, &inducing, &inducing)?;
    linalg::add_diag(&mut kzz, jitter);
    let chol_z = linalg::cholesky(kzz.clone())?;
    let kzx = kernel_matrix(kind, h, &inducing, inputs)?;
    let v = linalg::solve_lower(&chol_z, &kzx);
    let q_diag = linalg::col_sq_norms(&v);
    let k_diag = kernel_diag(kind, h, inputs)?;

    let mut clamped = vec![false; n];
    let lambda = DVector::from_fn(n, |i, _| {
        let raw = lambda_sign * (k_diag[i] + jitter + h.sigma_n2() - q_diag[i]);
        if raw < jitter && lambda_sign > 0.0 {
            clamped[i] = true;
            jitter
        } else {
            raw
        }
    });

    // B = I + V Lambda^{-1} V'
    let mut u = v.clone();
    for (i, mut col) in u.column_iter_mut().enumerate() {
        col /= lambda[i];
    }
    let mut b = &v * u.transpose();
    linalg::add_diag(&mut b, 1.0);
    let chol_b = linalg::cholesky(b)?;

    let beta = linalg::solve_lower_vec(&chol_b, &(&u * &y0));
    let gamma = linalg::solve_upper_vec(&chol_b, &beta);
    let weights = linalg::solve_upper_vec(&chol_z, &gamma);

    Ok(FitcState {
        kind,
        hyper: h.clone(),
        inputs: inputs.to_vec(),
        inducing,
        y0,
        kzz,
        kzx,
        chol_z,
        v,
        lambda,
        clamped,
        chol_b,
        beta,
        gamma,
        weights,
    })
}

impl FitcState {
    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    pub fn inducing(&self) -> &[Point] {
        &self.inducing
    }

    /// The training-conditional diagonal `Lambda`.
    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Projected mean weights `Sigma K_zx Lambda^{-1} y0`.
    pub fn mean_weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        let h = &self.hyper;
        let kzt = kernel_matrix(self.kind, h, &self.inducing, test)?;
        let vt = linalg::solve_lower(&self.chol_z, &kzt);
        let mean = vt.tr_mul(&self.gamma).add_scalar(h.mean_c);
        let wt = linalg::solve_lower(&self.chol_b, &vt);
        let ktt = kernel_matrix(self.kind, h, test, test)?;
        let cov = ktt - vt.tr_mul(&vt) + wt.tr_mul(&wt);
        Ok(GpPosterior { mean, cov }.tidy())
    }

    pub fn predict_marginals(&self, test: &[Point]) -> Result<(DVector<f64>, DVector<f64>)> {
        let h = &self.hyper;
        let kzt = kernel_matrix(self.kind, h, &self.inducing, test)?;
        let vt = linalg::solve_lower(&self.chol_z, &kzt);
        let mean = vt.tr_mul(&self.gamma).add_scalar(h.mean_c);
        let wt = linalg::solve_lower(&self.chol_b, &vt);
        let var = kernel_diag(self.kind, h, test)? - linalg::col_sq_norms(&vt) + linalg::col_sq_norms(&wt);
        Ok((mean, var.map(|x| x.max(0.0))))
    }

    /// Log density of the targets under `N(m, Q + Lambda)`.
    pub fn log_likelihood(&self) -> f64 {
        let n = self.inputs.len() as f64;
        let quad: f64 =
            self.y0.iter().zip(self.lambda.iter()).map(|(y, l)| y * y / l).sum::<f64>() - self.beta.norm_squared();
        let log_det = linalg::log_det(&self.chol_b) + self.lambda.iter().map(|l| l.ln()).sum::<f64>();
        -0.5 * quad - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln()
    }

    /// Gradient over the flat hyperparameter vector, inducing coordinates
    /// included.
    pub fn grad_log_likelihood(&self) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let layout = h.layout();
        let n = self.inputs.len();
        let m = self.inducing.len();

        // alpha = C^{-1} y0 = Lambda^{-1} (y0 - V' L_b^{-T} beta)
        let t = &self.gamma;
        let vt_t = self.v.tr_mul(t);
        let alpha = DVector::from_fn(n, |i, _| (self.y0[i] - vt_t[i]) / self.lambda[i]);

        // U = V Lambda^{-1}, P = B^{-1} U, so C^{-1} = Lambda^{-1} - U' P
        let mut u = self.v.clone();
        for (i, mut col) in u.column_iter_mut().enumerate() {
            col /= self.lambda[i];
        }
        let lb_inv = linalg::lower_inverse(&self.chol_b);
        let p = lb_inv.transpose() * (&lb_inv * &u);
        // Kz^{-1} Kzx
        let bmat = linalg::lower_inverse(&self.chol_z).transpose() * &self.v;

        // R = Bmat W, W = C^{-1} - alpha alpha'
        let mut r = bmat.clone();
        for (i, mut col) in r.column_iter_mut().enumerate() {
            col /= self.lambda[i];
        }
        let bu = &bmat * u.transpose();
        r -= &bu * &p;
        let b_alpha = &bmat * &alpha;
        r.ger(-1.0, &b_alpha, &alpha, 1.0);

        // diag(W), zeroed where Lambda was clamped (no derivative there)
        let w_diag = DVector::from_fn(n, |i, _| {
            if self.clamped[i] {
                0.0
            } else {
                let up: f64 = u.column(i).dot(&p.column(i));
                1.0 / self.lambda[i] - up - alpha[i] * alpha[i]
            }
        });
        let w_sum = w_diag.sum();

        // G_zx (stored m x n) = R - Bmat diag(w);  G_z = R Bmat' - Bmat diag(w) Bmat'
        let mut bw = bmat.clone();
        for (i, mut col) in bw.column_iter_mut().enumerate() {
            col *= w_diag[i];
        }
        let g_zx = &r - &bw;
        let g_z = &g_zx * bmat.transpose();

        let mut grad = vec![0.0; layout.len()];
        grad[layout.mean] = alpha.sum();

        // tr(W dC) = 2 sum(dKzx .* G_zx) - sum(dKz .* G_z) + sum_i w_i dk_ii
        let sf2 = h.sigma_f2();
        let amp = layout.amplitude.clone();
        let amp_tr = 4.0 * linalg::frobenius_dot(&self.kzx, &g_zx) - 2.0 * linalg::frobenius_dot(&self.kzz, &g_z)
            + 2.0 * (sf2 + h.jitter()) * w_sum;
        for idx in amp {
            grad[idx] = -0.5 * amp_tr;
        }
        grad[layout.noise] = -0.5 * 2.0 * h.sigma_n2() * w_sum;

        let lengths = h.lengths();
        let inv_sq: Vec<f64> = lengths.iter().map(|l| 1.0 / (l * l)).collect();
        let ard = self.kind == KernelKind::SeArd;
        let dims: Vec<Vec<usize>> = if ard { vec![vec![0], vec![1]] } else { vec![vec![0, 1]] };
        for (li, dset) in dims.iter().enumerate() {
            let w = inv_sq[li];
            let mut tr_x = 0.0;
            for i in 0..n {
                let x = self.inputs[i];
                for j in 0..m {
                    let z = self.inducing[j];
                    let d2: f64 = dset.iter().map(|&d| (x[d] - z[d]).powi(2)).sum();
                    tr_x += self.kzx[(j, i)] * d2 * w * g_zx[(j, i)];
                }
            }
            let mut tr_z = 0.0;
            for a in 0..m {
                for b in 0..m {
                    if a == b {
                        continue;
                    }
                    let za = self.inducing[a];
                    let zb = self.inducing[b];
                    let d2: f64 = dset.iter().map(|&d| (za[d] - zb[d]).powi(2)).sum();
                    tr_z += self.kzz[(a, b)] * d2 * w * g_z[(a, b)];
                }
            }
            grad[layout.lengths.start + li] = -0.5 * (2.0 * tr_x - tr_z);
        }

        // inducing coordinates
        let base = layout.extras.start;
        for j in 0..m {
            let z = self.inducing[j];
            let mut acc = [0.0; 2];
            for i in 0..n {
                let dk = se_grad_wrt_second(self.kind, h, self.inputs[i], z, self.kzx[(j, i)]);
                acc[0] += 2.0 * g_zx[(j, i)] * dk[0];
                acc[1] += 2.0 * g_zx[(j, i)] * dk[1];
            }
            for k in 0..m {
                if k == j {
                    continue;
                }
                let dk = se_grad_wrt_second(self.kind, h, self.inducing[k], z, self.kzz[(j, k)]);
                acc[0] -= 2.0 * g_z[(j, k)] * dk[0];
                acc[1] -= 2.0 * g_z[(j, k)] * dk[1];
            }
            grad[base + 2 * j] = -0.5 * acc[0];
            grad[base + 2 * j + 1] = -0.5 * acc[1];
        }
        Ok(grad)
    }
}

/// Default inducing set: every `stride`-th input in acquisition order.
pub fn subsample_inducing(inputs: &[Point], m: usize) -> Vec<Point> {
    if m == 0 || inputs.is_empty() {
        return Vec::new();
    }
    let stride = (inputs.len() as f64 / m as f64).max(1.0);
    (0..m.min(inputs.len())).map(|r| inputs[((r as f64 * stride).floor() as usize).min(inputs.len() - 1)]).collect()
}
