//! Anomaly detection pipeline for industrial water treatment telemetry.
//!
//! The crate covers the full path from raw sensor CSV to a scored model:
//! logic rules stamp weak labels onto the series, a three stage filter
//! (correlation, collinearity, forest importance) picks the feature subset,
//! the preparation layer balances and windows the data, and a from-scratch
//! LSTM is trained incrementally so memory stays bounded on long captures.
//! A deterministic synthetic plant stands in for restricted testbed data.

pub mod dataio;
pub mod error;
pub mod eval;
pub mod exec;
pub mod featsel;
pub mod matrix;
pub mod pipeline;
pub mod prep;
pub mod rng;
pub mod rules;
pub mod synthplant;
pub mod tinylstm;
pub mod trainer;

pub use error::{Error, Result};
pub use rng::Seed;
