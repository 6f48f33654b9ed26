//! Signal preserving attention for transformers without shortcuts.
//!
//! The crate builds attention matrices whose products keep the location-wise
//! kernel matrix `Σ = X·Xᵀ/d` well behaved through depth, realizes them as
//! masked softmax attention with a fixed bias and row rescaling, and checks the
//! resulting kernel dynamics both in the infinite-width limit and with explicit
//! finite-width forward passes.
//!
//! Modules, bottom-up:
//! - [`linalg`]: dense matrices, Cholesky, triangular solves, samplers.
//! - [`kernels`]: uniform/exponential kernel families and SPA operators.
//! - [`schedules`]: per-block decay rates, repeated-token corrections,
//!   shortcut adjustments.
//! - [`propagation`]: kernel-space evolution through configurable stacks.
//! - [`finite_width`]: attention layers with real weights.
//! - [`validation`]: named invariant suites with pass/fail reporting.

pub mod error;
pub mod finite_width;
pub mod kernels;
pub mod linalg;
pub mod propagation;
pub mod schedules;
pub mod validation;

pub use error::{Error, Result};
