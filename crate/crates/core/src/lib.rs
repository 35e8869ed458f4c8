//! Small GPT training stack with schedulable LayerNorm removal.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod model;
pub mod norm;
pub mod numerics;
pub mod schedule;
pub mod train;

pub use error::{Error, Result};
