//! Simulation and Monte Carlo verification toolkit for countable systems of
//! Ornstein-Uhlenbeck-type SDEs
//!
//! ```text
//! dX^i = sum_j sigma_ij(X) dW^j - lambda_i b_i(X) X^i dt,   a = sigma sigma^T,
//! ```
//!
//! with Hölder coefficients. The crate simulates spectral Galerkin
//! truncations, evaluates the exact frozen-coefficient OU kernel, and
//! exercises the perturbation (Neumann series) and localization machinery
//! numerically.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coefficients;
pub mod config;
pub mod error;
pub mod functions;
pub mod galerkin;
pub mod localization;
pub mod martingale;
pub mod ou_kernel;
pub mod report;
pub mod rng;
pub mod scenarios;
pub mod spectrum;
pub mod stats;

pub use error::{Error, Result};
pub use spectrum::{make_spectrum, EigenRule, Spectrum, State};
pub use stats::MCEstimate;
