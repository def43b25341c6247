//! Gaussian-process feedforward for scanning quantum dot microscopy.
//!
//! The crate covers exact and sparse GP regression on scan grids, a
//! likelihood optimizer, a simulated Kelvin-probe plant with an
//! extremum-seeking controller, and the closed-loop scan driver that combines
//! them.

pub mod config;
pub mod control;
pub mod error;
pub mod experiments;
pub mod gp_exact;
pub mod grid;
pub mod hyperopt;
pub mod kernels;
pub mod linalg;
pub mod matrix_io;
pub mod model;
pub mod plant;
pub mod sparse;
pub mod verify;

pub use error::{Error, Result};
