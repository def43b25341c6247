//! Approximations that keep GP inference tractable as lines accumulate.

pub mod fitc;
pub mod kron;
pub mod sod;
pub mod ssgpr;
