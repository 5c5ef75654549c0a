//! Tensor-product penalized splines for spatiotemporal point data with
//! automatic Bayesian selection of the smoothing parameter.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data_model;
pub mod decomposition;
pub mod error;
pub mod givens;
pub mod predict;
pub mod selection;
pub mod simulate;
pub mod sparse;
pub mod splines;

pub use error::{Error, ErrorKind, Result};
