//! Estimation and inference for welfare and value functionals of the
//! conditional average treatment effect (CATE) under first-best treatment
//! assignment.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`]: samples, rectangles, target densities, CSV ingestion and
//!   common-support trimming.
//! * [`bspline`]: clamped knot vectors and tensor-product B-spline bases.
//! * [`sieve`]: least-squares sieve fits of the outcome on
//!   treatment-interacted bases, the robust coefficient covariance and the
//!   linear-probability propensity fit.
//! * [`qmc`]: Sobol points and quasi-Monte Carlo integration on rectangles.
//! * [`density`]: product Gaussian kernel density estimation.
//! * [`functionals`]: plug-in estimators of `W = ∫[h]₊ f` and
//!   `V = ∫1{h ≥ 0} v₀ f`, their standard errors and confidence intervals,
//!   and the sieve score bootstrap.
//! * [`dgp`]: the fifteen simulation designs and their ground truth.
//! * [`montecarlo`]: the replication driver producing bias / SD / SE /
//!   coverage tables.

pub mod bspline;
pub mod data;
pub mod defaults;
pub mod density;
pub mod dgp;
mod error;
pub mod functionals;
pub mod montecarlo;
pub mod qmc;
pub mod sieve;

pub use error::{Error, Result};
