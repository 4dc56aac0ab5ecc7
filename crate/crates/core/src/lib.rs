//! Time-series forecasting by prompting a small transformer with patch
//! embeddings and nearest-neighbor text prototypes.

pub mod archive;
pub mod backbone;
pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod metrics;
pub mod model;
pub mod normalize;
pub mod ops;
pub mod params;
pub mod prototypes;
pub mod support;
pub mod trainer;

pub use error::{Error, Result};
