//! Diagonal-plus-low-rank approximation of the DFT-conjugated covariance of a
//! stationary Gaussian time series, and the likelihood machinery built on it.

pub mod acov;
pub mod dense;
pub mod error;
pub mod fit;
pub mod likelihood;
pub mod lowrank;
pub mod models;
pub mod optim;
pub mod quadrature;
pub mod simulate;
pub mod toeplitz;
pub mod whittle;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
