//! Robust low-rank estimation for multi-response linear models whose data
//! are heavy-tailed and/or quantized with random dithers.
//!
//! The pipeline is: [`preprocess`] (shrink rows, dither, quantize) →
//! [`estimators`] (bias-corrected and spectrally truncated moments, with
//! levels from [`calibrate`]) → [`solver`] (nuclear-norm penalized least
//! squares). [`simgen`] and [`harness`] drive Monte-Carlo studies of the
//! estimation error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mat;
pub mod preprocess;
pub mod simgen;
pub mod solver;

pub use error::{Error, Result};
pub use mat::{Mat, NormKind};
