//! Infinite-width evolution of the location-wise kernel `Σ = X·Xᵀ/d` through
//! attention stacks, with input-kernel samplers and rank-collapse metrics.

mod metrics;
mod sampler;
mod stack;
mod steps;

pub use metrics::{rank_collapse_metrics, CollapseMetrics};
pub use sampler::{
    expected_input_kernel, expected_offdiag_mean, id_kernel, sample_input_kernel,
    sample_input_kernel_with, sample_token_ids, RepeatSampler,
};
pub use stack::{
    run_stack, BlockOverride, BlockSpec, InputKernel, Method, NormPlacement, PropagationTrace,
    StackConfig,
};
pub use steps::{
    alibi_attention_matrices, alibi_slopes, attention_step, multihead_attention_step,
    normalize_step, skip_step,
};
