//! Attention blocks spanning the ablation lattice: SiLU or softmax weighting,
//! relative position/time biases or rotary encoding, the gated pointwise
//! transform, and three residual layouts.

mod bias;
mod block;
mod config;
pub mod suite;
#[cfg(test)]
mod tests;

pub use bias::{build_bias, rope_rotate, time_bucket, BiasTables, MASK_SENTINEL};
pub use block::{
    attention_weights, block_forward, block_param_count, stack_forward, stack_param_count,
    AttentionContext, BlockParams, BlockVars, StackParams, StackVars, INIT_STD,
};
pub use config::{Activation, BiasKind, BlockConfig, Residual};
