//! Self-check suite behind `sqdm-gp verify`: each sparse method against a
//! dense formula, and every analytic gradient against central differences.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gp_exact::fit_points;
use crate::grid::{Point, SamplePoint};
use crate::kernels::{kernel_diag, kernel_matrix, Extras, HyperParams, KernelKind};
use crate::model::Method;
use crate::sparse::fitc::{fit_impl, FitcState};
use crate::sparse::kron::kron_fit_points;
use crate::sparse::sod::{predict_sod, ActiveSetPolicy};
use crate::sparse::ssgpr::ssgpr_fit_points;

/// Deliberate bugs the suite must catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the FITC training-conditional diagonal.
    LambdaSign,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lambda-sign" => Some(Fault::LambdaSign),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    /// Largest error over all cases; infinite when a case failed to run.
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn points(r: &mut ChaCha8Rng, n: usize, span: f64) -> Vec<Point> {
    (0..n).map(|_| [r.random_range(0.0..span), r.random_range(0.0..span)]).collect()
}

fn separated(r: &mut ChaCha8Rng, n: usize, span: f64, min_dist: f64) -> Vec<Point> {
    let mut pts: Vec<Point> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [r.random_range(0.0..span), r.random_range(0.0..span)];
        if pts.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_dist) {
            pts.push(p);
        }
    }
    pts
}

fn targets(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn grid(nx: usize, ny: usize, px: f64, py: f64) -> Vec<Point> {
    (0..ny).flat_map(|j| (0..nx).map(move |i| [i as f64 * px, j as f64 * py])).collect()
}

fn diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

fn fitc(h: &HyperParams, x: &[Point], y: &[f64], fault: Option<Fault>) -> Result<FitcState> {
    let sign = if fault == Some(Fault::LambdaSign) { -1.0 } else { 1.0 };
    fit_impl(KernelKind::SeIso, h, x, y, sign)
}

/// Runs `case` for every seed and keeps the worst error.
fn worst(seeds: impl IntoIterator<Item = u64>, mut case: impl FnMut(u64) -> Result<f64>) -> (usize, f64) {
    let mut n = 0;
    let mut e: f64 = 0.0;
    for s in seeds {
        n += 1;
        e = match case(s) {
            Ok(v) if v.is_finite() => e.max(v),
            _ => f64::INFINITY,
        };
        if e.is_infinite() {
            break;
        }
    }
    (n, e)
}

fn fitc_identity(fault: Option<Fault>) -> Check {
    let (cases, max_error) = worst(0..20, |seed| {
        let mut r = rng(400 + seed);
        let n = r.random_range(5..=40);
        let x = separated(&mut r, n, 8.0, 0.6);
        let y = targets(&mut r, n);
        let test = points(&mut r, 50, 8.0);
        let base = HyperParams::new(0.2, 0.9, &[1.1], 0.3);
        let exact = fit_points(KernelKind::SeIso, &base, &x, &y)?;
        let f = fitc(&base.clone().with_extras(Extras::Inducing(x.clone())), &x, &y, fault)?;
        let (me, ve) = exact.predict_marginals(&test)?;
        let (mf, vf) = f.predict_marginals(&test)?;
        Ok(diff(&me, &mf).max(diff(&ve, &vf)).max((exact.log_likelihood() - f.log_likelihood()).abs()))
    });
    Check { name: "FITC with inducing = training inputs vs exact GP", cases, max_error, tolerance: 1e-8 }
}

/// FITC predictive marginals and likelihood straight from `Q`, `Lambda`
/// and `Sigma` formed densely.
fn fitc_dense(
    h: &HyperParams,
    x: &[Point],
    y: &[f64],
    z: &[Point],
    test: &[Point],
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let kind = KernelKind::SeIso;
    let j = h.jitter();
    let kzz = kernel_matrix(kind, h, z, z).ok()? + DMatrix::identity(z.len(), z.len()) * j;
    let kzz_inv = kzz.clone().try_inverse()?;
    let kxz = kernel_matrix(kind, h, x, z).ok()?;
    let q = &kxz * &kzz_inv * kxz.transpose();
    let kxx = kernel_diag(kind, h, x).ok()?;
    let lambda = DVector::from_fn(x.len(), |i, _| kxx[i] + j + h.sigma_n2() - q[(i, i)]);
    let lam_inv = DMatrix::from_diagonal(&lambda.map(|l| 1.0 / l));
    let sigma = (&kzz + kxz.transpose() * &lam_inv * &kxz).try_inverse()?;
    let y0 = DVector::from_iterator(y.len(), y.iter().map(|v| v - h.mean_c));
    let kts = kernel_matrix(kind, h, test, z).ok()?;
    let mean = (&kts * &sigma * kxz.transpose() * &lam_inv * &y0).add_scalar(h.mean_c);
    let qtt = &kts * &kzz_inv * kts.transpose();
    let extra = &kts * &sigma * kts.transpose();
    let ktt = kernel_diag(kind, h, test).ok()?;
    let var = DVector::from_fn(test.len(), |i, _| ktt[i] - qtt[(i, i)] + extra[(i, i)]);
    let cov = q + DMatrix::from_diagonal(&lambda);
    let chol = cov.cholesky()?;
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ll =
        -0.5 * y0.dot(&chol.solve(&y0)) - 0.5 * log_det - 0.5 * y0.len() as f64 * (2.0 * std::f64::consts::PI).ln();
    Some((mean, var, ll))
}

fn fitc_formula(fault: Option<Fault>) -> Check {
    let (cases, max_error) = worst(0..5, |seed| {
        let mut r = rng(500 + seed);
        let x = points(&mut r, 40, 5.0);
        let y = targets(&mut r, 40);
        let z = points(&mut r, 10, 5.0);
        let test = points(&mut r, 30, 5.0);
        let h = HyperParams::new(-0.1, 1.0, &[1.2], 0.3).with_extras(Extras::Inducing(z.clone()));
        let s = fitc(&h, &x, &y, fault)?;
        let (m, v) = s.predict_marginals(&test)?;
        let Some((mo, vo, llo)) = fitc_dense(&h, &x, &y, &z, &test) else { return Ok(f64::INFINITY) };
        Ok(diff(&m, &mo).max(diff(&v, &vo)).max((s.log_likelihood() - llo).abs() / llo.abs().max(1.0)))
    });
    Check { name: "FITC vs dense formula (n=40, m=10)", cases, max_error, tolerance: 1e-10 }
}

fn ssgpr_kernel() -> Check {
    let (cases, max_error) = worst(0..5, |seed| {
        let mut r = rng(600 + seed);
        let x = points(&mut r, 15, 3.0);
        let y = targets(&mut r, 15);
        let test = points(&mut r, 10, 3.0);
        let s: Vec<Point> = (0..4).map(|_| [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)]).collect();
        let h = HyperParams::new(0.1, 0.9, &[1.0], 0.2).with_extras(Extras::Spectral(s));
        let ss = ssgpr_fit_points(&h, &x, &y)?;
        let ex = fit_points(KernelKind::SparseSpectrum, &h, &x, &y)?;
        let (m1, v1) = ss.predict_marginals(&test)?;
        let (m2, v2) = ex.predict_marginals(&test)?;
        Ok(diff(&m1, &m2).max(diff(&v1, &v2)).max((ss.log_likelihood() - ex.log_likelihood()).abs()))
    });
    Check { name: "SSGPR vs exact GP, sparse-spectrum kernel (n=15, m=4)", cases, max_error, tolerance: 1e-8 }
}

fn kron_dense() -> Check {
    let shapes = [(3usize, 4usize), (4, 3), (8, 8)];
    let (cases, max_error) = worst(0..shapes.len() as u64, |i| {
        let (nx, ny) = shapes[i as usize];
        let mut r = rng(700 + i);
        let x = grid(nx, ny, 0.5, 0.7);
        let y = targets(&mut r, nx * ny);
        let test = points(&mut r, 12, 3.0);
        let h = HyperParams::new(0.1, 1.0, &[1.1, 0.8], 0.2).with_extras(Extras::AxisAmplitudes(vec![0.2, -0.5]));
        let k = kron_fit_points(&h, &x, &y)?;
        let d = fit_points(KernelKind::SeArd, &h, &x, &y)?;
        let pk = k.predict(&test)?;
        let pd = d.predict(&test)?;
        Ok(diff(&pk.mean, &pd.mean)
            .max((&pk.cov - &pd.cov).amax())
            .max((k.log_likelihood() - d.log_likelihood()).abs()))
    });
    Check { name: "Kronecker vs dense inference (3x4, 4x3, 8x8)", cases, max_error, tolerance: 1e-8 }
}

fn sod_exact() -> Check {
    let (cases, max_error) = worst(0..3, |seed| {
        let mut r = rng(800 + seed);
        let x = points(&mut r, 30, 4.0);
        let y = targets(&mut r, 30);
        let test = points(&mut r, 10, 4.0);
        let data: Vec<SamplePoint> = x.iter().zip(&y).map(|(p, t)| SamplePoint::new(*p, *t)).collect();
        let h = HyperParams::new(0.0, 1.0, &[1.0, 0.7], 0.1);
        let a = predict_sod(&ActiveSetPolicy::SlidingWindow { capacity: 40 }, &data, &test, KernelKind::SeArd, &h)?;
        let b = fit_points(KernelKind::SeArd, &h, &x, &y)?.predict(&test)?;
        Ok(diff(&a.mean, &b.mean).max((&a.cov - &b.cov).amax()))
    });
    Check { name: "SoD with capacity >= n vs exact GP", cases, max_error, tolerance: 1e-12 }
}

/// Largest componentwise `|analytic - fd| / max(|fd|, 1e-3)`.
fn gradient_error(method: Method, h: &HyperParams, x: &[Point], y: &[f64], fault: Option<Fault>) -> Result<f64> {
    let fit = |h: &HyperParams| -> Result<crate::model::Fitted> {
        match (method, fault) {
            (Method::Fitc(_), Some(_)) => Ok(crate::model::Fitted::Fitc(fitc(h, x, y, fault)?)),
            _ => method.fit(h, x, y),
        }
    };
    let analytic = fit(h)?.grad_log_likelihood()?;
    let v = h.to_vec();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for k in 0..v.len() {
        let mut a = v.clone();
        let mut b = v.clone();
        a[k] += eps;
        b[k] -= eps;
        let fd = (fit(&h.from_vec(&a)?)?.log_likelihood() - fit(&h.from_vec(&b)?)?.log_likelihood()) / (2.0 * eps);
        worst = worst.max((analytic[k] - fd).abs() / fd.abs().max(1e-3));
    }
    Ok(worst)
}

fn gradients(fault: Option<Fault>) -> Vec<Check> {
    let exact = worst(0..5, |seed| {
        let mut r = rng(seed);
        let x = points(&mut r, 8, 3.0);
        let y = targets(&mut r, 8);
        let iso = HyperParams::new(0.1, 0.9, &[1.2], 0.2);
        let ard = HyperParams::new(-0.2, 1.1, &[0.8, 1.7], 0.15);
        Ok(gradient_error(Method::Exact(KernelKind::SeIso), &iso, &x, &y, None)?.max(gradient_error(
            Method::Exact(KernelKind::SeArd),
            &ard,
            &x,
            &y,
            None,
        )?))
    });
    let fitc = worst(0..5, |seed| {
        let mut r = rng(100 + seed);
        let x = points(&mut r, 20, 4.0);
        let y = targets(&mut r, 20);
        let z = points(&mut r, 5, 4.0);
        let h = HyperParams::new(0.05, 0.8, &[1.3], 0.25).with_extras(Extras::Inducing(z));
        gradient_error(Method::Fitc(KernelKind::SeIso), &h, &x, &y, fault)
    });
    let ssgpr = worst(0..5, |seed| {
        let mut r = rng(200 + seed);
        let x = points(&mut r, 12, 3.0);
        let y = targets(&mut r, 12);
        let s: Vec<Point> = (0..3).map(|_| [r.random_range(-0.4..0.4), r.random_range(-0.4..0.4)]).collect();
        let h = HyperParams::new(0.1, 0.7, &[1.0], 0.3).with_extras(Extras::Spectral(s));
        gradient_error(Method::Ssgpr, &h, &x, &y, None)
    });
    let kron = worst(0..5, |seed| {
        let mut r = rng(300 + seed);
        let x = grid(5, 3, 0.4, 0.6);
        let y = targets(&mut r, 15);
        let h = HyperParams::new(0.1, 1.0, &[0.9, 1.4], 0.2).with_extras(Extras::AxisAmplitudes(vec![0.1, -0.3]));
        gradient_error(Method::Kronecker, &h, &x, &y, None)
    });
    vec![
        Check { name: "exact GP gradient vs central differences", cases: exact.0, max_error: exact.1, tolerance: 1e-4 },
        Check {
            name: "FITC gradient (incl. inducing inputs) vs central differences",
            cases: fitc.0,
            max_error: fitc.1,
            tolerance: 1e-4,
        },
        Check {
            name: "SSGPR gradient (incl. frequencies) vs central differences",
            cases: ssgpr.0,
            max_error: ssgpr.1,
            tolerance: 1e-4,
        },
        Check { name: "Kronecker gradient vs central differences", cases: kron.0, max_error: kron.1, tolerance: 1e-4 },
    ]
}

/// Runs every check, optionally with a deliberate bug injected.
pub fn run_checks(fault: Option<Fault>) -> Vec<Check> {
    let mut out = vec![fitc_identity(fault), fitc_formula(fault), ssgpr_kernel(), kron_dense(), sod_exact()];
    out.extend(gradients(fault));
    out
}

pub fn format_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = format!("{:<width$}  {:>5}  {:>10}  {:>9}  result\n", "check", "cases", "max error", "tolerance");
    for c in checks {
        let _ = writeln!(
            s,
            "{:<width$}  {:>5}  {:>10.3e}  {:>9.0e}  {}",
            c.name,
            c.cases,
            c.max_error,
            c.tolerance,
            if c.passed() { "PASS" } else { "FAIL" }
        );
    }
    s
}
