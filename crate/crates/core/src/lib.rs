//! Layer-wise linear-probe analysis of out-of-distribution tunnel effects.
//!
//! This crate is `no_std` (it needs `alloc`) and holds the numerical core:
//! dump encoding, activation pooling, probe training, tunnel metrics,
//! nonparametric statistics, Huber gradient boosting with exact tree SHAP,
//! and numerical rank. File IO and the CLI live in the `tunnelkit` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
extern crate alloc;

pub mod embedding;
pub mod error;
pub mod gbrt;
pub mod manifest;
pub mod metrics;
pub mod probe;
pub mod rank;
pub mod reduce;
pub mod rng;
pub mod shap;
pub mod slope;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
