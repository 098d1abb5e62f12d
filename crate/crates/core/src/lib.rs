//! Spatiotemporal individual-treatment-effect estimation over multi-type
//! event data, and event forecasting guided by the estimated effects.

pub mod autodiff;
pub mod causal;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod pipeline;
pub mod predict;
pub mod synth;

pub use error::{Error, Result};
