//! Temporal phenotype clustering of multivariate vital-sign trajectories.
//!
//! The crate is `no_std` (with `alloc`) and holds every algorithm: the cohort
//! data model, fixed-grid preprocessing, a synthetic cohort generator,
//! Euclidean and DTW time-series k-means, a small differentiable kernel, the
//! SOM-VAE and AC-TPC models (with class-prior weighted cross-entropy), and
//! the supervised cluster-quality metrics. File formats, configuration and the
//! command-line driver live in the `pheno` companion crate.
#![no_std]
#![forbid(unsafe_code)]
#![warn(missing_debug_implementations, rust_2018_idioms)]
// `!(x > 0.0)` is deliberate: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod actpc;
pub mod cohort;
pub mod diffkern;
pub mod dtw;
mod error;
pub mod eval;
pub mod matrix;
pub mod preprocess;
pub mod rng;
pub mod somvae;
pub mod synth;
pub mod trace;
pub mod tskm;

pub use error::{Error, Result};
pub use matrix::Matrix;
