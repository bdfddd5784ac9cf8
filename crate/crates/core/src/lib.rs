//! Aggregation of distribution forecasts from deep ensembles.
//!
//! The crate covers forecast distribution families, proper scoring and
//! calibration diagnostics, linear-pool and quantile-averaging (Vincentization)
//! aggregation, a small feed-forward network with three probabilistic output
//! heads, seeded simulation scenarios, and an experiment driver with CLI.

pub mod distributions;
pub mod error;
pub mod numeric;
pub mod scoring;
pub mod aggregation;
pub mod netlab;
pub mod simgen;
pub mod experiment;
pub mod cli;

pub use error::{Error, Result};
