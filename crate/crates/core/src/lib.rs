//! Analysis and simulation toolkit for repetition-based uplink NOMA.

// `!(x > 0.0)` guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod channel;
pub mod error;
pub mod fbl;
pub mod montecarlo;
pub mod numerics;
pub mod planner;
mod rng;

pub use error::{Error, Result};
