use super::families::{check_family_order, FamilyMember};
use crate::error::Result;
use crate::linalg::{inverse_symmetric_sqrt, symmetric_sqrt, Matrix};

/// Non-causal SPA attention `S_out · S_in⁻¹` built from symmetric square roots.
///
/// The result is dense and is returned as a plain matrix: non-negativity is
/// proven for the uniform family and only observed empirically for the
/// exponential one.
pub fn noncausal_spa_attention(
    t: usize,
    input: FamilyMember,
    output: FamilyMember,
) -> Result<Matrix> {
    check_family_order(input, output)?;
    let s_out = symmetric_sqrt(output.kernel(t)?.matrix())?;
    let s_in_inv = inverse_symmetric_sqrt(input.kernel(t)?.matrix())?;
    Ok(s_out.matmul(&s_in_inv)?)
}
