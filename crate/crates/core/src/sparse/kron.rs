//! Exact inference on full Cartesian grids with a product kernel.
//!
//! With line-major data the covariance is `K = K_y (x) K_x`. Each factor is
//! eigendecomposed once, `K_d = Q_d V_d Q_d'`, and every solve goes through
//! `(A (x) B) vec(X) = vec(A X B')` on the `ny x nx` target matrix, so the
//! `m x m` matrix is never formed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::gp_exact::GpPosterior;
use crate::grid::{Dataset, Point};
use crate::kernels::{Extras, HyperParams};

/// Per-axis inputs, covariances and eigendecompositions.
#[derive(Debug, Clone)]
pub struct KronFactors {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub kx: DMatrix<f64>,
    pub ky: DMatrix<f64>,
    pub qx: DMatrix<f64>,
    pub qy: DMatrix<f64>,
    pub vx: DVector<f64>,
    pub vy: DVector<f64>,
}

impl KronFactors {
    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All eigenvalues of `K_y (x) K_x`, in `(j, i)` order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.vy.iter().flat_map(|a| self.vx.iter().map(move |b| a * b)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct KronState {
    hyper: HyperParams,
    factors: KronFactors,
    /// `ny x nx` centred targets.
    y0: DMatrix<f64>,
    /// `ny x nx` weights `C^{-1} y0`.
    alpha: DMatrix<f64>,
    /// Noise variance plus jitter added to every eigenvalue.
    shift: f64,
}

/// Per-axis log amplitudes: taken from `AxisAmplitudes`, otherwise the whole
/// amplitude sits on the x factor.
fn axis_amplitudes(h: &HyperParams) -> [f64; 2] {
    match &h.extras {
        Extras::AxisAmplitudes(a) if a.len() == 2 => [a[0], a[1]],
        _ => [h.log_sigma_f, 0.0],
    }
}

fn axis_kernel(coords: &[f64], log_amp: f64, length: f64) -> DMatrix<f64> {
    let a2 = (2.0 * log_amp).exp();
    let w = 1.0 / (length * length);
    DMatrix::from_fn(coords.len(), coords.len(), |i, j| {
        let d = coords[i] - coords[j];
        a2 * (-0.5 * d * d * w).exp()
    })
}

fn axis_cross(test: &[f64], coords: &[f64], log_amp: f64, length: f64) -> DMatrix<f64> {
    let a2 = (2.0 * log_amp).exp();
    let w = 1.0 / (length * length);
    DMatrix::from_fn(test.len(), coords.len(), |i, j| {
        let d = test[i] - coords[j];
        a2 * (-0.5 * d * d * w).exp()
    })
}

/// Splits line-major inputs into axis coordinates; errors unless every node of
/// the Cartesian product is present exactly once, in raster order.
pub fn grid_axes(inputs: &[Point]) -> Result<(Vec<f64>, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::NotAGrid("no data".into()));
    }
    let y_first = inputs[0][1];
    let xs: Vec<f64> = inputs.iter().take_while(|p| p[1] == y_first).map(|p| p[0]).collect();
    let nx = xs.len();
    if !inputs.len().is_multiple_of(nx) {
        return Err(Error::NotAGrid(format!(
            "{} points are not a multiple of the {nx}-point first line",
            inputs.len()
        )));
    }
    let ny = inputs.len() / nx;
    let mut ys = Vec::with_capacity(ny);
    for j in 0..ny {
        let line = &inputs[j * nx..(j + 1) * nx];
        let y = line[0][1];
        for (i, p) in line.iter().enumerate() {
            if p[1] != y || (p[0] - xs[i]).abs() > 1e-9 {
                return Err(Error::NotAGrid(format!("point {} breaks the grid", j * nx + i)));
            }
        }
        if j > 0 && y <= ys[j - 1] {
            return Err(Error::NotAGrid(format!("line {j} is out of order")));
        }
        ys.push(y);
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::NotAGrid("x coordinates are not ascending".into()));
    }
    Ok((xs, ys))
}

pub fn kron_fit(h: &HyperParams, data: &Dataset) -> Result<KronState> {
    kron_fit_points(h, &data.inputs(), &data.targets())
}

pub fn kron_fit_points(h: &HyperParams, inputs: &[Point], targets: &[f64]) -> Result<KronState> {
    if h.log_lengths.len() != 2 {
        return Err(Error::Dimension("Kronecker inference needs one length scale per axis".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Dimension(format!("{} inputs vs {} targets", inputs.len(), targets.len())));
    }
    let (xs, ys) = grid_axes(inputs)?;
    let (nx, ny) = (xs.len(), ys.len());
    let amp = axis_amplitudes(h);
    let l = h.lengths();
    let kx = axis_kernel(&xs, amp[0], l[0]);
    let ky = axis_kernel(&ys, amp[1], l[1]);
    let ex = SymmetricEigen::new(kx.clone());
    let ey = SymmetricEigen::new(ky.clone());
    let factors = KronFactors {
        xs,
        ys,
        kx,
        ky,
        qx: ex.eigenvectors,
        qy: ey.eigenvectors,
        vx: ex.eigenvalues,
        vy: ey.eigenvalues,
    };
    let y0 = DMatrix::from_fn(ny, nx, |j, i| targets[j * nx + i] - h.mean_c);
    let shift = h.sigma_n2() + h.jitter();
    let alpha = solve(&factors, shift, &y0);
    Ok(KronState { hyper: h.clone(), factors, y0, alpha, shift })
}

/// `(K + shift I)^{-1} b` for a line-major `ny x nx` right-hand side.
fn solve(f: &KronFactors, shift: f64, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut t = f.qy.tr_mul(b) * &f.qx;
    for j in 0..t.nrows() {
        for i in 0..t.ncols() {
            t[(j, i)] /= f.vy[j] * f.vx[i] + shift;
        }
    }
    &f.qy * t * f.qx.transpose()
}

/// `(K_y (x) K_x) vec(b)`.
fn kron_apply(ky: &DMatrix<f64>, kx: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    ky * b * kx.transpose()
}

impl KronState {
    pub fn factors(&self) -> &KronFactors {
        &self.factors
    }

    pub fn hyper(&self) -> &HyperParams {
        &self.hyper
    }

    /// Weights in line-major order.
    pub fn alpha(&self) -> Vec<f64> {
        self.alpha.transpose().iter().copied().collect()
    }

    /// Dense `(K + sigma_n^2 I) alpha` via Kronecker mat-vecs.
    pub fn apply_covariance(&self, v: &[f64]) -> Vec<f64> {
        let (ny, nx) = self.alpha.shape();
        let b = DMatrix::from_fn(ny, nx, |j, i| v[j * nx + i]);
        let r = kron_apply(&self.factors.ky, &self.factors.kx, &b) + b * self.shift;
        r.transpose().iter().copied().collect()
    }

    fn cross(&self, test: &[Point]) -> (DMatrix<f64>, DMatrix<f64>) {
        let amp = axis_amplitudes(&self.hyper);
        let l = self.hyper.lengths();
        let tx: Vec<f64> = test.iter().map(|p| p[0]).collect();
        let ty: Vec<f64> = test.iter().map(|p| p[1]).collect();
        (axis_cross(&tx, &self.factors.xs, amp[0], l[0]), axis_cross(&ty, &self.factors.ys, amp[1], l[1]))
    }

    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        let (ktx, kty) = self.cross(test);
        let nt = test.len();
        let c = self.hyper.mean_c;
        let ax = &self.alpha * ktx.transpose(); // ny x nt
        let mean = DVector::from_fn(nt, |t, _| c + kty.row(t).transpose().dot(&ax.column(t)));
        // eigen-basis projections of each cross-covariance vector
        let px = ktx * &self.factors.qx; // nt x nx
        let py = kty * &self.factors.qy; // nt x ny
        let (nx, ny) = (self.factors.xs.len(), self.factors.ys.len());
        let mut inv = DMatrix::zeros(ny, nx);
        for j in 0..ny {
            for i in 0..nx {
                inv[(j, i)] = 1.0 / (self.factors.vy[j] * self.factors.vx[i] + self.shift);
            }
        }
        let sf2 = self.hyper.sigma_f2();
        let l = self.hyper.lengths();
        let mut cov = DMatrix::zeros(nt, nt);
        for t in 0..nt {
            for u in t..nt {
                let mut acc = 0.0;
                for j in 0..ny {
                    let a = py[(t, j)] * py[(u, j)];
                    let mut row = 0.0;
                    for i in 0..nx {
                        row += px[(t, i)] * px[(u, i)] * inv[(j, i)];
                    }
                    acc += a * row;
                }
                let dx = test[t][0] - test[u][0];
                let dy = test[t][1] - test[u][1];
                let k = sf2 * (-0.5 * (dx * dx / (l[0] * l[0]) + dy * dy / (l[1] * l[1]))).exp();
                cov[(t, u)] = k - acc;
                cov[(u, t)] = k - acc;
            }
        }
        Ok(GpPosterior { mean, cov }.tidy())
    }

    pub fn log_likelihood(&self) -> f64 {
        let n = self.factors.len() as f64;
        let log_det: f64 = self.factors.eigenvalues().iter().map(|v| (v + self.shift).ln()).sum();
        -0.5 * linalg_dot(&self.y0, &self.alpha) - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln()
    }

    /// Gradient over the flat hyperparameter vector; per-axis amplitudes get
    /// one entry each.
    pub fn grad_log_likelihood(&self) -> Result<Vec<f64>> {
        let h = &self.hyper;
        let layout = h.layout();
        let mut grad = vec![0.0; layout.len()];
        let f = &self.factors;
        let l = h.lengths();
        let a = &self.alpha;
        let alpha_sq = a.norm_squared();
        let tr_cinv: f64 = f.eigenvalues().iter().map(|v| 1.0 / (v + self.shift)).sum();

        // 1/2 alpha' dK alpha - 1/2 tr(C^{-1} dK) for a derivative of one factor
        let y_term = |dky: &DMatrix<f64>| -> f64 {
            let quad = linalg_dot(a, &kron_apply(dky, &f.kx, a));
            let d = (f.qy.tr_mul(dky) * &f.qy).diagonal();
            let mut tr = 0.0;
            for j in 0..f.vy.len() {
                for i in 0..f.vx.len() {
                    tr += d[j] * f.vx[i] / (f.vy[j] * f.vx[i] + self.shift);
                }
            }
            0.5 * quad - 0.5 * tr
        };
        let x_term = |dkx: &DMatrix<f64>| -> f64 {
            let quad = linalg_dot(a, &kron_apply(&f.ky, dkx, a));
            let d = (f.qx.tr_mul(dkx) * &f.qx).diagonal();
            let mut tr = 0.0;
            for j in 0..f.vy.len() {
                for i in 0..f.vx.len() {
                    tr += f.vy[j] * d[i] / (f.vy[j] * f.vx[i] + self.shift);
                }
            }
            0.5 * quad - 0.5 * tr
        };

        let jitter_term = h.jitter() * (alpha_sq - tr_cinv);
        let gx_amp = x_term(&(&f.kx * 2.0)) + jitter_term;
        let gy_amp = y_term(&(&f.ky * 2.0)) + jitter_term;
        let amp = layout.amplitude.clone();
        if amp.len() == 2 {
            grad[amp.start] = gx_amp;
            grad[amp.start + 1] = gy_amp;
        } else {
            grad[amp.start] = gx_amp;
        }

        let dlen = |coords: &[f64], k: &DMatrix<f64>, length: f64| {
            let w = 1.0 / (length * length);
            DMatrix::from_fn(coords.len(), coords.len(), |i, j| {
                let d = coords[i] - coords[j];
                k[(i, j)] * d * d * w
            })
        };
        grad[layout.lengths.start] = x_term(&dlen(&f.xs, &f.kx, l[0]));
        grad[layout.lengths.start + 1] = y_term(&dlen(&f.ys, &f.ky, l[1]));
        grad[layout.noise] = h.sigma_n2() * (alpha_sq - tr_cinv);
        grad[layout.mean] = a.sum();
        Ok(grad)
    }
}

fn linalg_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    crate::linalg::frobenius_dot(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_grid_is_rejected() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]];
        assert!(matches!(grid_axes(&pts), Err(Error::NotAGrid(_))));
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.5, 1.0]];
        assert!(matches!(grid_axes(&pts), Err(Error::NotAGrid(_))));
        let pts = [[0.0, 1.0], [1.0, 1.0], [0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(grid_axes(&pts), Err(Error::NotAGrid(_))));
    }

    #[test]
    fn axes_of_a_grid() {
        let pts = [[0.0, 0.0], [0.5, 0.0], [1.0, 0.0], [0.0, 2.0], [0.5, 2.0], [1.0, 2.0]];
        let (xs, ys) = grid_axes(&pts).unwrap();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
        assert_eq!(ys, vec![0.0, 2.0]);
    }

    #[test]
    fn spectrum_is_pairwise_products() {
        let pts: Vec<Point> = (0..3).flat_map(|j| (0..4).map(move |i| [i as f64 * 0.7, j as f64])).collect();
        let h = HyperParams::new(0.0, 1.0, &[1.1, 0.8], 0.1).with_extras(Extras::AxisAmplitudes(vec![0.2, -0.1]));
        let s = kron_fit_points(&h, &pts, &[0.0; 12]).unwrap();
        let f = s.factors();
        let dense = f.ky.kronecker(&f.kx);
        let mut expected: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        let mut got = f.eigenvalues();
        expected.sort_by(f64::total_cmp);
        got.sort_by(f64::total_cmp);
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
        // orthonormal factors
        assert!((f.qx.tr_mul(&f.qx) - DMatrix::identity(4, 4)).amax() < 1e-8);
        assert!((f.qy.tr_mul(&f.qy) - DMatrix::identity(3, 3)).amax() < 1e-8);
    }
}
