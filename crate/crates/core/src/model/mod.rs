//! Recall and ranking models over the attention stack.

pub mod checkpoint;
pub mod config;
pub mod net;

#[cfg(test)]
mod tests;

pub use config::{Head, ModelConfig, RecallLoss};
pub use net::{deinterleave_ranking, interleave_ranking, Bound, Model, Tokens};
