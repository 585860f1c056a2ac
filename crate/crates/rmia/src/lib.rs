//! Experiment runner, file formats and CLI plumbing around [`rmia_core`].

pub mod config;
pub mod error;
pub mod io;
pub mod runner;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use rmia_core;
