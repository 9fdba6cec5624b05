//! Neighborhood-level spatial risk modeling.
//!
//! The pipeline turns census counts into socioeconomic indicators, reduces
//! them with PCA, regresses case density on the component scores (OLS and
//! Huber M-estimation), benchmarks a random forest, and ranks neighborhoods
//! by predicted risk.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forest;
pub mod geojson;
pub mod ingest;
pub mod numkernel;
pub mod pca;
pub mod pipeline;
pub mod ranking;
pub mod regression;
pub mod report;
pub mod series;
pub mod synth;
pub mod tables;

pub use error::{Error, ErrorClass, Result};
