//! Numerical toolkit for parameter-dependent boundary value problems on the
//! half-space with global projection boundary conditions.
//!
//! The crate is organised bottom-up:
//!
//! * [`symbol`]: symbols in `(x', xi', mu)`, limit and angular symbols, the transmission check.
//! * [`halfline`]: Laguerre discretization of `L^2(R_+)`, the dilation group-action, traces.
//! * [`green`]: symbol-kernels, twisting, Green blocks, `Tr_+`, `op^+` and order reductions.
//! * [`model`]: Laplace-type model problems and the three ellipticity checks.
//! * [`resolvent`]: resolvent assembly, norm scans along a ray, trace densities.
//! * [`asymptotics`]: fitting the two-ladder expansion and interior coefficients.
//! * [`toeplitz`]: finite-dimensional Toeplitz-type parametrices.

pub mod asymptotics;
pub mod error;
pub mod green;
pub mod halfline;
pub mod linalg;
pub mod model;
pub mod resolvent;
pub mod symbol;
pub mod toeplitz;

pub use error::{Error, Result};
