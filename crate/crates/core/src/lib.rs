//! Membership inference through algorithmic recourse.
//!
//! This crate holds the algorithmic side of the toolkit and builds without
//! `std` (it needs `alloc`): synthetic data and splits, from-scratch
//! classifiers and a tabular VAE trained with Adam, three recourse generators
//! (gradient-based SCFE, growing spheres, latent-space CCHVAE), the
//! counterfactual-distance and loss-based membership attacks, ROC metrics and
//! the differential-privacy accuracy bound.
//!
//! File formats, the experiment runner and the CLI live in the `rmia` crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod attack;
pub mod data;
mod error;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod privacy;
pub mod recourse;
pub mod seed;

pub use error::{Error, Result};
