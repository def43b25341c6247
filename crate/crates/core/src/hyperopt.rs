//! Conjugate-gradient ascent on the log marginal likelihood.
//!
//! Polak-Ribiere directions (clipped at zero, restarted whenever the new
//! direction is not uphill) with an Armijo backtracking line search. An
//! accepted step gets one quadratic-interpolation refinement, which makes the
//! search exact on quadratic objectives.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::grid::Point;
use crate::kernels::HyperParams;
use crate::model::Method;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_cg_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub grad_tol: f64,
    /// Stop once an iteration improves the objective by less than this,
    /// relative to `max(1, |f|)`. Zero disables the test.
    pub rel_improvement_tol: f64,
    /// Wall-clock cap; `None` keeps runs deterministic.
    pub budget: Option<Duration>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_cg_iters: 20,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_backtracks: 12,
            grad_tol: 1e-6,
            rel_improvement_tol: 0.0,
            budget: None,
        }
    }
}

/// Independent Gaussian priors on entries of the flat parameter vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HyperPrior {
    pub terms: Vec<(usize, f64, f64)>,
}

impl HyperPrior {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `N(mean, std^2)` on entry `index`.
    pub fn with(mut self, index: usize, mean: f64, std: f64) -> Self {
        self.terms.push((index, mean, std));
        self
    }

    fn apply(&self, x: &[f64], f: &mut f64, g: &mut [f64]) {
        for &(i, m, s) in &self.terms {
            let z = (x[i] - m) / s;
            *f -= 0.5 * z * z;
            if let Some(gi) = g.get_mut(i) {
                *gi -= z / s;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    SmallImprovement,
    IterationLimit,
    Budget,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
    pub elapsed: Duration,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Maximizes `f(x, want_grad)`, which returns the value and, when asked,
/// the gradient (otherwise any vector, typically empty). Errors mark
/// infeasible points and count as failed trial steps. Line-search trials
/// only ask for values; the gradient is requested once per accepted step.
pub fn maximize<F>(mut f: F, x0: &[f64], cfg: &OptimizerConfig, prior: Option<&HyperPrior>) -> Result<OptimizeReport>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Vec<f64>)>,
{
    let start = Instant::now();
    let mut evaluations = 0;
    let mut eval = |x: &[f64], want_grad: bool| -> Option<(f64, Vec<f64>)> {
        evaluations += 1;
        let (mut v, mut g) = f(x, want_grad).ok()?;
        if !want_grad {
            g.clear();
        } else if g.len() != x.len() {
            return None;
        }
        if let Some(p) = prior {
            p.apply(x, &mut v, &mut g);
        }
        (v.is_finite() && g.iter().all(|a| a.is_finite())).then_some((v, g))
    };

    let (mut fx, mut g) = eval(x0, true)
        .ok_or_else(|| Error::InitialPoint("objective is not finite at the starting hyperparameters".into()))?;
    let mut x = x0.to_vec();
    let mut trace = vec![fx];
    let mut d = g.clone();
    let mut prev_slope: Option<(f64, f64)> = None; // (step, slope)
    let mut iterations = 0;

    let stop = loop {
        if norm(&g) < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= cfg.max_cg_iters {
            break StopReason::IterationLimit;
        }
        if cfg.budget.is_some_and(|b| start.elapsed() >= b) {
            break StopReason::Budget;
        }
        let mut slope = dot(&g, &d);
        if slope <= 0.0 {
            d = g.clone();
            slope = dot(&g, &d);
        }
        let t0 = match prev_slope {
            Some((t, s)) => (t * s / slope).clamp(1e-8, 1e8),
            None => (1.0 / norm(&d)).min(1.0),
        };

        let mut t = t0;
        let mut accepted = None;
        for _ in 0..=cfg.max_backtracks {
            let xt = axpy(&x, t, &d);
            if let Some((ft, _)) = eval(&xt, false) {
                if ft >= fx + cfg.armijo_c * t * slope {
                    accepted = Some((t, xt, ft));
                    break;
                }
            }
            t *= cfg.shrink;
        }
        let Some((mut t, mut xn, mut fnew)) = accepted else {
            break StopReason::LineSearchFailed;
        };
        // fit phi(s) = fx + slope s + a s^2 through the accepted point
        let a = (fnew - fx - slope * t) / (t * t);
        if a < 0.0 {
            let tq = -slope / (2.0 * a);
            if tq > 0.0 && (tq - t).abs() > 1e-3 * t && tq < 10.0 * t {
                let xq = axpy(&x, tq, &d);
                if let Some((fq, _)) = eval(&xq, false) {
                    if fq > fnew && fq >= fx + cfg.armijo_c * tq * slope {
                        (t, xn, fnew) = (tq, xq, fq);
                    }
                }
            }
        }
        let Some((_, gn)) = eval(&xn, true) else {
            break StopReason::LineSearchFailed;
        };

        iterations += 1;
        let improvement = fnew - fx;
        let beta = (dot(&gn, &gn) - dot(&gn, &g)) / dot(&g, &g);
        let beta = if beta.is_finite() { beta.max(0.0) } else { 0.0 };
        prev_slope = Some((t, slope));
        d = gn.iter().zip(&d).map(|(gi, di)| gi + beta * di).collect();
        x = xn;
        fx = fnew;
        g = gn;
        trace.push(fx);
        if cfg.rel_improvement_tol > 0.0 && improvement < cfg.rel_improvement_tol * fx.abs().max(1.0) {
            break StopReason::SmallImprovement;
        }
    };

    Ok(OptimizeReport { x, value: fx, trace, iterations, evaluations, stop, elapsed: start.elapsed() })
}

/// Tunes every free hyperparameter of `method` on the given data.
pub fn optimize(
    method: Method,
    h0: &HyperParams,
    inputs: &[Point],
    targets: &[f64],
    cfg: &OptimizerConfig,
    prior: Option<&HyperPrior>,
) -> Result<(HyperParams, OptimizeReport)> {
    // The gradient is requested at the point last evaluated for its value,
    // so keep that fit around.
    let mut last: Option<(Vec<f64>, crate::model::Fitted)> = None;
    let objective = |v: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
        let fitted = match last.take() {
            Some((x, f)) if x == v => f,
            _ => method.fit(&h0.from_vec(v)?, inputs, targets)?,
        };
        let value = fitted.log_likelihood();
        let grad = if want_grad { fitted.grad_log_likelihood()? } else { Vec::new() };
        last = Some((v.to_vec(), fitted));
        Ok((value, grad))
    };
    let report = maximize(objective, &h0.to_vec(), cfg, prior)?;
    Ok((h0.from_vec(&report.x)?, report))
}

/// Outcome of one between-lines adaptation.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub hyper: HyperParams,
    pub report: Option<OptimizeReport>,
}

/// Warm-started tuning between scan lines. A zero budget leaves the
/// parameters untouched; an optimizer failure falls back to `h_prev`.
pub fn per_line_adapt(
    method: Method,
    h_prev: &HyperParams,
    inputs: &[Point],
    targets: &[f64],
    cfg: &OptimizerConfig,
    prior: Option<&HyperPrior>,
) -> Adaptation {
    if cfg.budget.is_some_and(|b| b.is_zero()) || cfg.max_cg_iters == 0 {
        return Adaptation { hyper: h_prev.clone(), report: None };
    }
    match optimize(method, h_prev, inputs, targets, cfg, prior) {
        Ok((h, r)) => Adaptation { hyper: h, report: Some(r) },
        Err(_) => Adaptation { hyper: h_prev.clone(), report: None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concave_quadratic_in_three_iterations() {
        // f = -1/2 (x-b)' A (x-b)
        let a = [[4.0, 1.0, 0.0], [1.0, 3.0, 0.5], [0.0, 0.5, 2.0]];
        let b = [1.0, -2.0, 0.5];
        let f = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
            let r: Vec<f64> = (0..3).map(|i| x[i] - b[i]).collect();
            let ar: Vec<f64> = (0..3).map(|i| dot(&a[i], &r)).collect();
            Ok((-0.5 * dot(&r, &ar), ar.iter().map(|v| -v).collect()))
        };
        let cfg = OptimizerConfig { grad_tol: 1e-8, ..Default::default() };
        let rep = maximize(f, &[0.0, 0.0, 0.0], &cfg, None).unwrap();
        assert!(rep.iterations <= 3, "{} iterations", rep.iterations);
        for (x, b) in rep.x.iter().zip(b) {
            assert!((x - b).abs() < 1e-6);
        }
    }

    #[test]
    fn trace_is_monotone_on_rosenbrock() {
        let f = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let ga = 2.0 * (1.0 - a) + 400.0 * a * (b - a * a);
            let gb = -200.0 * (b - a * a);
            Ok((v, vec![ga, gb]))
        };
        let cfg = OptimizerConfig { max_cg_iters: 200, ..Default::default() };
        let rep = maximize(f, &[-1.2, 1.0], &cfg, None).unwrap();
        assert!(rep.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(rep.value > -1e-3);
    }

    #[test]
    fn one_gradient_per_accepted_step() {
        let grads = std::cell::Cell::new(0);
        let f = |x: &[f64], want_grad: bool| -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            if !want_grad {
                return Ok((v, Vec::new()));
            }
            grads.set(grads.get() + 1);
            Ok((v, vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)]))
        };
        let cfg = OptimizerConfig { max_cg_iters: 50, ..Default::default() };
        let rep = maximize(f, &[-1.2, 1.0], &cfg, None).unwrap();
        assert_eq!(grads.get(), rep.iterations + 1);
        assert!(rep.evaluations > grads.get());
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64], _: bool| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        let err = maximize(f, &[0.0], &OptimizerConfig::default(), None).unwrap_err();
        assert!(matches!(err, Error::InitialPoint(_)));
    }

    #[test]
    fn prior_pulls_towards_its_mean() {
        let f = |_: &[f64], _: bool| -> Result<(f64, Vec<f64>)> { Ok((0.0, vec![0.0])) };
        let p = HyperPrior::new().with(0, 2.0, 1.0);
        let rep = maximize(f, &[0.0], &OptimizerConfig::default(), Some(&p)).unwrap();
        assert!((rep.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_budget_keeps_parameters() {
        let h = HyperParams::new(0.0, 1.0, &[1.0], 0.1);
        let cfg = OptimizerConfig { budget: Some(Duration::ZERO), ..Default::default() };
        let pts = [[0.0, 0.0], [1.0, 0.0]];
        let a = per_line_adapt(Method::Exact(crate::kernels::KernelKind::SeIso), &h, &pts, &[0.0, 1.0], &cfg, None);
        assert_eq!(a.hyper, h);
        assert!(a.report.is_none());
    }
}
