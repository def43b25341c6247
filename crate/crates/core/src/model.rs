//! Uniform interface over the inference methods used by the optimizer and the
//! scan controller.

use nalgebra::DVector;

use crate::error::Result;
use crate::gp_exact::{fit_points, FitState, GpPosterior};
use crate::grid::Point;
use crate::kernels::{HyperParams, KernelKind};
use crate::sparse::fitc::{fitc_fit_points, FitcState};
use crate::sparse::kron::{kron_fit_points, KronState};
use crate::sparse::ssgpr::{ssgpr_fit_points, SsgprState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Exact(KernelKind),
    Fitc(KernelKind),
    Ssgpr,
    Kronecker,
}

#[derive(Debug, Clone)]
pub enum Fitted {
    Exact(FitState),
    Fitc(FitcState),
    Ssgpr(SsgprState),
    Kronecker(KronState),
}

impl Method {
    pub fn fit(&self, h: &HyperParams, inputs: &[Point], targets: &[f64]) -> Result<Fitted> {
        Ok(match self {
            Method::Exact(k) => Fitted::Exact(fit_points(*k, h, inputs, targets)?),
            Method::Fitc(k) => Fitted::Fitc(fitc_fit_points(*k, h, inputs, targets)?),
            Method::Ssgpr => Fitted::Ssgpr(ssgpr_fit_points(h, inputs, targets)?),
            Method::Kronecker => Fitted::Kronecker(kron_fit_points(h, inputs, targets)?),
        })
    }
}

impl Fitted {
    pub fn hyper(&self) -> &HyperParams {
        match self {
            Fitted::Exact(s) => s.hyper(),
            Fitted::Fitc(s) => s.hyper(),
            Fitted::Ssgpr(s) => s.hyper(),
            Fitted::Kronecker(s) => s.hyper(),
        }
    }

    pub fn predict(&self, test: &[Point]) -> Result<GpPosterior> {
        match self {
            Fitted::Exact(s) => s.predict(test),
            Fitted::Fitc(s) => s.predict(test),
            Fitted::Ssgpr(s) => s.predict(test),
            Fitted::Kronecker(s) => s.predict(test),
        }
    }

    pub fn predict_mean(&self, test: &[Point]) -> Result<DVector<f64>> {
        match self {
            Fitted::Exact(s) => s.predict_mean(test),
            _ => Ok(self.predict(test)?.mean),
        }
    }

    /// Latent mean and variance at each test point.
    pub fn predict_marginals(&self, test: &[Point]) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            Fitted::Exact(s) => s.predict_marginals(test),
            Fitted::Fitc(s) => s.predict_marginals(test),
            Fitted::Ssgpr(s) => s.predict_marginals(test),
            Fitted::Kronecker(s) => {
                let p = s.predict(test)?;
                let v = p.variance();
                Ok((p.mean, v))
            }
        }
    }

    pub fn log_likelihood(&self) -> f64 {
        match self {
            Fitted::Exact(s) => s.log_likelihood(),
            Fitted::Fitc(s) => s.log_likelihood(),
            Fitted::Ssgpr(s) => s.log_likelihood(),
            Fitted::Kronecker(s) => s.log_likelihood(),
        }
    }

    pub fn grad_log_likelihood(&self) -> Result<Vec<f64>> {
        match self {
            Fitted::Exact(s) => s.grad_log_likelihood(),
            Fitted::Fitc(s) => s.grad_log_likelihood(),
            Fitted::Ssgpr(s) => s.grad_log_likelihood(),
            Fitted::Kronecker(s) => s.grad_log_likelihood(),
        }
    }
}
