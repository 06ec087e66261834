//! A-optimal source-encoding weights for the frequency-domain Helmholtz
//! Bayesian inverse problem on a square.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aopt;
pub mod counters;
pub mod error;
pub mod fem;
pub mod harness;
pub mod helmholtz;
pub mod map_solver;
pub mod prior;
pub mod weights;

pub use error::{Error, Result};
