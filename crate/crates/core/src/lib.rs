//! Engineered-bath simulation for a transmon coupled to a lossy SNAIL mode.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod integrator;
pub mod model;
pub mod protocol;
pub mod quantum;

pub use error::{Error, Result};
