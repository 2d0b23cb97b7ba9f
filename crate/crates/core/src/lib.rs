//! Effective Mori-Zwanzig laboratory for one-dimensional Langevin dynamics.
//!
//! The crate discretizes the Kolmogorov backward generator of the Langevin
//! SDE in a Gibbs-weighted polynomial basis and uses it to compute Mori
//! projections, memory kernels and fluctuation forces, spectra, and
//! hypocoercivity certificates. An independent trajectory pipeline
//! (BAOAB/Euler-Maruyama ensembles, correlation estimates, Volterra
//! inversion) cross-checks the memory kernel from simulated data.
//!
//! Module map:
//!
//! - [`model`]: potentials, the Gibbs measure and its quadrature, condition checks
//! - [`galerkin`]: basis, operator matrices, spectra, propagation, kernel structure
//! - [`mori`]: memory kernel, fluctuation force and correlation series, decay fits
//! - [`dynamics`]: SDE ensembles, correlation estimates, Volterra extraction
//! - [`hypo`]: hypocoercivity constants, certificates and entropy monitoring
//! - [`cli`]: configuration, pipeline orchestration and artifact output

pub mod cli;
pub mod dynamics;
mod error;
pub mod galerkin;
pub mod hypo;
pub mod linalg;
pub mod model;
pub mod mori;
pub mod series;

pub use error::{EmzError, Result};
