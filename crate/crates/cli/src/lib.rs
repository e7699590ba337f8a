//! Command-line driver: configuration, the two-stage pipeline, method
//! comparisons and the score-estimation benchmark, with atomic artifact
//! writing.

// Validators write `!(x > 0.0)` so that NaN is rejected with the other bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
