//! Kernel ridge regression over Matérn native spaces and the frequentist
//! Kennedy–O'Hagan calibration estimator.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`kernel`] | Matérn kernel, kernel matrices, spectral density |
//! | [`rkhs`] | kernel expansions, interpolation, integral-class functions |
//! | [`design`] | Sobol designs, fill and separation distance |
//! | [`krr`] | kernel ridge regression fits and λ schedules |
//! | [`calibration`] | K-O objective, θ̂ estimation, θ′ oracle |
//! | [`benchmark`] | the one-dimensional benchmark problem and its model readings |
//! | [`experiment`] | Monte Carlo convergence studies and reports |
//! | [`cli`] | command-line dispatch |
//!
//! Support code lives in [`bessel`], [`sobol`], [`quadrature`], [`linalg`],
//! [`optimize`] and [`output`].

pub mod benchmark;
pub mod bessel;
pub mod calibration;
pub mod cli;
pub mod design;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod krr;
pub mod linalg;
pub mod optimize;
pub mod output;
pub mod quadrature;
pub mod rkhs;
pub mod sobol;

pub use error::{Error, Result};
