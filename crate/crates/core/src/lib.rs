// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod seed;
pub mod traders;
