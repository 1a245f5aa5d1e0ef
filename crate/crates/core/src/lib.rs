#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod embedstat;
pub mod error;
pub mod exec;
pub mod kernels;
pub mod nulldist;
pub mod numquad;
pub mod polar;
pub mod simharness;
pub mod standardize;

pub use error::{Error, Result, Stage};
