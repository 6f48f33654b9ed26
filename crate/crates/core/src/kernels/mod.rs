//! Uniform and exponential kernel families and the signal preserving
//! attention operators built from their Cholesky factors.
//!
//! For consecutive family members `Σ_in`, `Σ_out` with factors `L_in`, `L_out`,
//! the attention matrix `A = L_out·L_in⁻¹` maps `Σ_in` to `Σ_out` exactly and is
//! elementwise non-negative when the off-diagonals grow (`ρ_in ≤ ρ_out`, or
//! `γ_in ≥ γ_out`). Chaining such matrices telescopes to the last factor.

mod decay;
mod families;
mod noncausal;
mod operator;

pub use decay::{decay_helper_a, DecayRate};
pub use families::{
    check_family_order, exp_cholesky_analytic, exp_kernel, uniform_kernel, CholeskyFactor,
    FamilyMember, KernelMatrix,
};
pub use noncausal::noncausal_spa_attention;
pub use operator::{
    decompose_dpb, espa_attention_analytic, espa_matrix_analytic, numeric_attention_matrix,
    uspa_attention, AttentionOperator, DEFAULT_NEG_BIAS, NEGATIVE_CLAMP,
};
