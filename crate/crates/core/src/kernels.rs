//! Constant mean, squared-exponential and sparse-spectrum covariances.
//!
//! Positive hyperparameters are stored as logarithms so that the optimizer
//! works on an unconstrained vector. The flat layout used by
//! [`HyperParams::to_vec`] is
//!
//! `[c, amplitude.., log l.., log sigma_n, extras..]`
//!
//! where `amplitude` is `log sigma_f`, or one log amplitude per grid axis for
//! product kernels, and `extras` are inducing inputs or spectral frequencies
//! flattened as `(x, y)` pairs.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::linalg::JITTER;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    SeIso,
    SeArd,
    SparseSpectrum,
}

impl KernelKind {
    /// Number of length scales this kind carries.
    pub fn length_count(&self) -> usize {
        match self {
            KernelKind::SeArd => 2,
            KernelKind::SeIso | KernelKind::SparseSpectrum => 1,
        }
    }
}

/// Method-specific hyperparameter block.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Extras {
    #[default]
    None,
    /// FITC pseudo-inputs.
    Inducing(Vec<Point>),
    /// Sparse-spectrum frequencies, 1/nm.
    Spectral(Vec<Point>),
    /// Per-axis log amplitudes of a product kernel. The effective
    /// `log sigma_f` is their sum.
    AxisAmplitudes(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub mean_c: f64,
    pub log_sigma_f: f64,
    pub log_lengths: Vec<f64>,
    pub log_sigma_n: f64,
    pub extras: Extras,
}

/// Index ranges of each block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub mean: usize,
    pub amplitude: Range<usize>,
    pub lengths: Range<usize>,
    pub noise: usize,
    pub extras: Range<usize>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.extras.end
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl HyperParams {
    pub fn new(mean_c: f64, sigma_f: f64, lengths: &[f64], sigma_n: f64) -> Self {
        Self {
            mean_c,
            log_sigma_f: sigma_f.ln(),
            log_lengths: lengths.iter().map(|l| l.ln()).collect(),
            log_sigma_n: sigma_n.ln(),
            extras: Extras::None,
        }
    }

    pub fn with_extras(mut self, extras: Extras) -> Self {
        if let Extras::AxisAmplitudes(a) = &extras {
            self.log_sigma_f = a.iter().sum();
        }
        self.extras = extras;
        self
    }

    pub fn sigma_f(&self) -> f64 {
        self.log_sigma_f.exp()
    }

    pub fn sigma_f2(&self) -> f64 {
        (2.0 * self.log_sigma_f).exp()
    }

    pub fn sigma_n(&self) -> f64 {
        self.log_sigma_n.exp()
    }

    pub fn sigma_n2(&self) -> f64 {
        (2.0 * self.log_sigma_n).exp()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.log_lengths.iter().map(|l| l.exp()).collect()
    }

    /// Absolute jitter for kernel self-matrices.
    pub fn jitter(&self) -> f64 {
        JITTER * self.sigma_f2()
    }

    pub fn inducing(&self) -> Option<&[Point]> {
        match &self.extras {
            Extras::Inducing(v) => Some(v),
            _ => None,
        }
    }

    pub fn frequencies(&self) -> Option<&[Point]> {
        match &self.extras {
            Extras::Spectral(v) => Some(v),
            _ => None,
        }
    }

    pub fn layout(&self) -> Layout {
        let amp = match &self.extras {
            Extras::AxisAmplitudes(a) => a.len(),
            _ => 1,
        };
        let amplitude = 1..1 + amp;
        let lengths = amplitude.end..amplitude.end + self.log_lengths.len();
        let noise = lengths.end;
        let extra = match &self.extras {
            Extras::Inducing(v) | Extras::Spectral(v) => 2 * v.len(),
            _ => 0,
        };
        Layout { mean: 0, amplitude, lengths, noise, extras: noise + 1..noise + 1 + extra }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.mean_c];
        match &self.extras {
            Extras::AxisAmplitudes(a) => v.extend_from_slice(a),
            _ => v.push(self.log_sigma_f),
        }
        v.extend_from_slice(&self.log_lengths);
        v.push(self.log_sigma_n);
        if let Extras::Inducing(p) | Extras::Spectral(p) = &self.extras {
            v.extend(p.iter().flat_map(|q| q.iter().copied()));
        }
        v
    }

    /// Same shape as `self`, values taken from `v`.
    pub fn from_vec(&self, v: &[f64]) -> Result<Self> {
        let layout = self.layout();
        if v.len() != layout.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, layout needs {}",
                v.len(),
                layout.len()
            )));
        }
        let pairs = |r: Range<usize>| -> Vec<Point> { v[r].chunks_exact(2).map(|c| [c[0], c[1]]).collect() };
        let (log_sigma_f, extras) = match &self.extras {
            Extras::AxisAmplitudes(_) => {
                let a = v[layout.amplitude.clone()].to_vec();
                (a.iter().sum(), Extras::AxisAmplitudes(a))
            }
            Extras::Inducing(_) => (v[layout.amplitude.start], Extras::Inducing(pairs(layout.extras))),
            Extras::Spectral(_) => (v[layout.amplitude.start], Extras::Spectral(pairs(layout.extras))),
            Extras::None => (v[layout.amplitude.start], Extras::None),
        };
        Ok(Self {
            mean_c: v[0],
            log_sigma_f,
            log_lengths: v[layout.lengths].to_vec(),
            log_sigma_n: v[layout.noise],
            extras,
        })
    }

    /// Human-readable names matching [`HyperParams::to_vec`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["mean_c".to_string()];
        match &self.extras {
            Extras::AxisAmplitudes(a) => names.extend((0..a.len()).map(|d| format!("log_sigma_f[{d}]"))),
            _ => names.push("log_sigma_f".into()),
        }
        names.extend((0..self.log_lengths.len()).map(|d| format!("log_length[{d}]")));
        names.push("log_sigma_n".into());
        let label = match &self.extras {
            Extras::Inducing(_) => "inducing",
            _ => "frequency",
        };
        if let Extras::Inducing(p) | Extras::Spectral(p) = &self.extras {
            for r in 0..p.len() {
                names.push(format!("{label}[{r}].x"));
                names.push(format!("{label}[{r}].y"));
            }
        }
        names
    }

    fn check(&self, kind: KernelKind) -> Result<()> {
        if self.log_lengths.len() != kind.length_count() {
            return Err(Error::Dimension(format!(
                "{kind:?} needs {} length scale(s), got {}",
                kind.length_count(),
                self.log_lengths.len()
            )));
        }
        if kind == KernelKind::SparseSpectrum && self.frequencies().is_none_or(|f| f.is_empty()) {
            return Err(Error::InvalidArgument("sparse-spectrum kernel needs at least one spectral frequency".into()));
        }
        Ok(())
    }
}

/// Constant mean over `inputs`.
pub fn mean_eval(h: &HyperParams, inputs: &[Point]) -> DVector<f64> {
    DVector::from_element(inputs.len(), h.mean_c)
}

/// Inverse squared length per dimension.
fn inv_sq_lengths(kind: KernelKind, h: &HyperParams) -> [f64; 2] {
    let l = h.lengths();
    match kind {
        KernelKind::SeArd => [1.0 / (l[0] * l[0]), 1.0 / (l[1] * l[1])],
        _ => {
            let v = 1.0 / (l[0] * l[0]);
            [v, v]
        }
    }
}

/// Covariance between two points.
pub fn kernel_value(kind: KernelKind, h: &HyperParams, p: Point, q: Point) -> f64 {
    let sf2 = h.sigma_f2();
    match kind {
        KernelKind::SeIso | KernelKind::SeArd => {
            let w = inv_sq_lengths(kind, h);
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            sf2 * (-0.5 * (dx * dx * w[0] + dy * dy * w[1])).exp()
        }
        KernelKind::SparseSpectrum => {
            let s = h.frequencies().unwrap_or(&[]);
            let dx = p[0] - q[0];
            let dy = p[1] - q[1];
            let sum: f64 = s.iter().map(|f| (TWO_PI * (f[0] * dx + f[1] * dy)).cos()).sum();
            sf2 / s.len() as f64 * sum
        }
    }
}

/// `|a| x |b|` covariance matrix.
pub fn kernel_matrix(kind: KernelKind, h: &HyperParams, a: &[Point], b: &[Point]) -> Result<DMatrix<f64>> {
    h.check(kind)?;
    Ok(match kind {
        KernelKind::SeIso | KernelKind::SeArd => {
            let w = inv_sq_lengths(kind, h);
            let sf2 = h.sigma_f2();
            DMatrix::from_fn(a.len(), b.len(), |i, j| {
                let dx = a[i][0] - b[j][0];
                let dy = a[i][1] - b[j][1];
                sf2 * (-0.5 * (dx * dx * w[0] + dy * dy * w[1])).exp()
            })
        }
        KernelKind::SparseSpectrum => DMatrix::from_fn(a.len(), b.len(), |i, j| kernel_value(kind, h, a[i], b[j])),
    })
}

/// Prior variance at each input.
pub fn kernel_diag(kind: KernelKind, h: &HyperParams, a: &[Point]) -> Result<DVector<f64>> {
    h.check(kind)?;
    Ok(DVector::from_element(a.len(), h.sigma_f2()))
}

/// Derivatives of `kernel_matrix(a, b)` with respect to every entry of the
/// flat hyperparameter vector. `None` marks blocks the matrix does not depend
/// on (mean, noise, inducing inputs).
pub fn kernel_grad(kind: KernelKind, h: &HyperParams, a: &[Point], b: &[Point]) -> Result<Vec<Option<DMatrix<f64>>>> {
    let k = kernel_matrix(kind, h, a, b)?;
    let layout = h.layout();
    let mut out: Vec<Option<DMatrix<f64>>> = vec![None; layout.len()];
    for idx in layout.amplitude.clone() {
        out[idx] = Some(&k * 2.0);
    }
    match kind {
        KernelKind::SeIso => {
            let w = inv_sq_lengths(kind, h)[0];
            let d = DMatrix::from_fn(a.len(), b.len(), |i, j| {
                let dx = a[i][0] - b[j][0];
                let dy = a[i][1] - b[j][1];
                k[(i, j)] * (dx * dx + dy * dy) * w
            });
            out[layout.lengths.start] = Some(d);
        }
        KernelKind::SeArd => {
            let w = inv_sq_lengths(kind, h);
            for dim in 0..2 {
                let d = DMatrix::from_fn(a.len(), b.len(), |i, j| {
                    let diff = a[i][dim] - b[j][dim];
                    k[(i, j)] * diff * diff * w[dim]
                });
                out[layout.lengths.start + dim] = Some(d);
            }
        }
        KernelKind::SparseSpectrum => {
            let s = h.frequencies().unwrap_or(&[]);
            let scale = h.sigma_f2() / s.len() as f64;
            for (r, f) in s.iter().enumerate() {
                for dim in 0..2 {
                    let d = DMatrix::from_fn(a.len(), b.len(), |i, j| {
                        let dx = a[i][0] - b[j][0];
                        let dy = a[i][1] - b[j][1];
                        let delta = if dim == 0 { dx } else { dy };
                        -scale * (TWO_PI * (f[0] * dx + f[1] * dy)).sin() * TWO_PI * delta
                    });
                    out[layout.extras.start + 2 * r + dim] = Some(d);
                }
            }
        }
    }
    Ok(out)
}

/// `d k(x, z) / d z` for the squared-exponential kinds.
pub fn se_grad_wrt_second(kind: KernelKind, h: &HyperParams, x: Point, z: Point, k: f64) -> [f64; 2] {
    let w = inv_sq_lengths(kind, h);
    [k * (x[0] - z[0]) * w[0], k * (x[1] - z[1]) * w[1]]
}

/// Draws `m` frequencies from the spectral density of an isotropic SE
/// kernel with length `length`, i.e. `N(0, (2 pi l)^-2 I)`.
pub fn sample_se_spectrum(m: usize, length: f64, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0 / (TWO_PI * length)).expect("finite length");
    (0..m).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect()
}
