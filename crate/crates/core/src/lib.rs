//! Robust growth-optimal investment under ergodicity with drift uncertainty
//! and stochastic factors.
//!
//! Inputs are a covariance field c, an invariant density p and a factor
//! drift b_Y. From these the crate evaluates the coefficient fields, checks
//! compatibility and integrability, and computes robust strategies and
//! growth rates: in closed form for Gaussian/OU environments and for three
//! pairs-trading families, and by quadrature and Monte-Carlo simulation as
//! independent checks.

// `!(a < b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussian;
pub mod inputs;
pub mod linalg;
pub mod pairs;
pub mod quadrature;
pub mod report;
pub mod sim;
pub mod slice;
pub mod special;
pub mod strategy;

pub use error::{Error, Result};
