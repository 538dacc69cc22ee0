//! Core library for a desk-scale generative recommendation lab: a small
//! autodiff tensor engine, configurable attention blocks, recall and ranking
//! models, the data pipeline, metrics and a deterministic training loop.

pub mod attention;
pub mod container;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
