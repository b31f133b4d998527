// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod csvout;
pub mod dynkin;
pub mod ensemble;
pub mod error;
pub mod fd;
pub mod market;
pub mod mlp;
pub mod policy;
pub mod premium;
pub mod pricing;
pub mod trainer;
