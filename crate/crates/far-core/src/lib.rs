//! Estimation, simulation and forecasting of functional autoregressive (FAR)
//! processes observed as discrete samples on a grid.
//!
//! The crate is organised around one estimation pipeline and two baselines:
//!
//! - [`kernel`] — reproducing-kernel evaluation, Gram matrices and the
//!   spectral matrix algebra (symmetric square roots, operator nuclear norm)
//!   used by the kernel-based estimator.
//! - [`series`] — grids, sampled-series containers, quadrature, cosine basis
//!   evaluation, differencing and CSV I/O.
//! - [`sim`] — exact finite-rank FAR(D) simulation via its VAR(D) score
//!   recursion, scenario builders and the oracle predictor.
//! - [`opt`] — accelerated proximal gradient solver for trace-norm
//!   regularized least squares with singular-value thresholding.
//! - [`rkhs`] — the kernel-space nuclear-norm estimator: problem assembly,
//!   operator recovery, prediction, cross-validation and MISE scoring.
//! - [`fpca`] — FPCA-based baselines (Yule-Walker and FPCA-VAR) including
//!   the cubic B-spline pre-smoothing both require.
//! - [`bench`] — configuration-driven experiment harness with seeded
//!   replications, forecast evaluation and CSV/JSON result emission.

pub mod bench;
pub mod error;
pub mod fpca;
pub mod kernel;
pub mod opt;
pub mod rkhs;
pub mod series;
pub mod sim;

pub use error::{Error, Result};
