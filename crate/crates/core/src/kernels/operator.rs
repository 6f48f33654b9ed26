use super::families::{check_family_order, CholeskyFactor, FamilyMember};
use super::DecayRate;
use crate::error::{Error, Result};
use crate::linalg::{causal_mask, solve_lower_triangular_right, Matrix};

/// Default magnitude of the pre-softmax bias used where `log P` is `−∞`.
pub const DEFAULT_NEG_BIAS: f64 = 1e30;

/// Negative entries no larger than this in magnitude are rounding noise and are
/// clamped to zero before decomposition.
pub const NEGATIVE_CLAMP: f64 = 1e-12;

/// Lower-triangular non-negative attention matrix together with the
/// `A = diag(D)·P` split and the bias `B = log P` that realizes `P` through a
/// causal softmax with a zero query-key term.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOperator {
    a: Matrix,
    rescale: Vec<f64>,
    probs: Matrix,
    bias: Matrix,
    mask: Matrix,
    neg_bias_const: f64,
}

impl AttentionOperator {
    pub fn size(&self) -> usize {
        self.a.rows()
    }

    /// The attention matrix `A`.
    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Row sums `D` of `A`.
    pub fn rescale(&self) -> &[f64] {
        &self.rescale
    }

    /// Row-stochastic `P`.
    pub fn probabilities(&self) -> &Matrix {
        &self.probs
    }

    /// Pre-softmax bias `B`.
    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn mask(&self) -> &Matrix {
        &self.mask
    }

    pub fn neg_bias_const(&self) -> f64 {
        self.neg_bias_const
    }

    pub fn into_matrix(self) -> Matrix {
        self.a
    }
}

/// Splits a lower-triangular non-negative `A` into `diag(D)·P` and `B = log P`.
///
/// Entries of `P` that are zero map to `−neg_bias_const` in `B`, as do the
/// masked positions above the diagonal.
pub fn decompose_dpb(a: &Matrix, neg_bias_const: f64) -> Result<AttentionOperator> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "attention matrix must be square, got {:?}",
            a.shape()
        )));
    }
    if !neg_bias_const.is_finite() || neg_bias_const <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "negative bias constant must be positive and finite, got {neg_bias_const}"
        )));
    }
    let t = a.rows();
    let mut clamped = a.clone();
    for i in 0..t {
        for j in 0..t {
            let v = a[(i, j)];
            if !v.is_finite() {
                return Err(Error::NegativeEntry {
                    row: i,
                    col: j,
                    value: v,
                });
            }
            if j > i {
                if v.abs() > NEGATIVE_CLAMP {
                    return Err(Error::NotLowerTriangular {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                clamped[(i, j)] = 0.0;
            } else if v < 0.0 {
                if v < -NEGATIVE_CLAMP {
                    return Err(Error::NegativeEntry {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
                clamped[(i, j)] = 0.0;
            }
        }
    }
    let rescale = clamped.row_sums();
    if let Some((row, &sum)) = rescale.iter().enumerate().find(|(_, &s)| s <= 1e-14) {
        return Err(Error::ZeroRowSum { row, sum });
    }
    let probs = Matrix::from_fn(t, t, |i, j| clamped[(i, j)] / rescale[i]);
    let bias = probs.map(|p| if p > 0.0 { p.ln() } else { -neg_bias_const });
    Ok(AttentionOperator {
        a: clamped,
        rescale,
        probs,
        bias,
        mask: causal_mask(t),
        neg_bias_const,
    })
}

/// Closed-form E-SPA attention matrix `L(γ_out)·L(γ_in)⁻¹`.
pub fn espa_matrix_analytic(t: usize, gamma_in: DecayRate, gamma_out: DecayRate) -> Result<Matrix> {
    check_family_order(
        FamilyMember::Exponential(gamma_in),
        FamilyMember::Exponential(gamma_out),
    )?;
    if t == 0 {
        return Err(Error::DimensionMismatch(
            "sequence length must be at least 1".into(),
        ));
    }
    let ratio = gamma_out.a() / gamma_in.a();
    let (e_out, e_in) = (gamma_out.decay(1), gamma_in.decay(1));
    let first_col = e_out - ratio * e_in;
    let sub_diag = ratio * (e_out - e_in);
    Ok(Matrix::from_fn(t, t, |i, j| {
        if j > i {
            0.0
        } else if i == j {
            if i == 0 {
                1.0
            } else {
                ratio
            }
        } else if j == 0 {
            first_col * gamma_out.decay(i - 1)
        } else {
            sub_diag * gamma_out.decay(i - j - 1)
        }
    }))
}

/// E-SPA attention operator from the closed form, decomposed with the default
/// bias constant.
pub fn espa_attention_analytic(
    t: usize,
    gamma_in: DecayRate,
    gamma_out: DecayRate,
) -> Result<AttentionOperator> {
    decompose_dpb(
        &espa_matrix_analytic(t, gamma_in, gamma_out)?,
        DEFAULT_NEG_BIAS,
    )
}

/// `L_out · L_in⁻¹` from numeric Cholesky factors of two family members.
pub fn numeric_attention_matrix(
    t: usize,
    input: FamilyMember,
    output: FamilyMember,
) -> Result<Matrix> {
    check_family_order(input, output)?;
    let l_in = CholeskyFactor::of(&input.kernel(t)?)?;
    let l_out = CholeskyFactor::of(&output.kernel(t)?)?;
    Ok(solve_lower_triangular_right(l_out.matrix(), l_in.matrix())?)
}

/// U-SPA attention operator. There is no closed form for the uniform family, so
/// this always goes through numeric Cholesky factors and a triangular solve.
pub fn uspa_attention(t: usize, rho_in: f64, rho_out: f64) -> Result<AttentionOperator> {
    let a = numeric_attention_matrix(
        t,
        FamilyMember::Uniform(rho_in),
        FamilyMember::Uniform(rho_out),
    )?;
    decompose_dpb(&a, DEFAULT_NEG_BIAS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::exp_cholesky_analytic;
    use crate::linalg::masked_row_softmax;

    fn g(x: f64) -> DecayRate {
        DecayRate::new(x).unwrap()
    }

    #[test]
    fn decompose_identity() {
        let op = decompose_dpb(&Matrix::identity(3), DEFAULT_NEG_BIAS).unwrap();
        assert_eq!(op.rescale(), &[1.0, 1.0, 1.0]);
        assert_eq!(op.probabilities(), &Matrix::identity(3));
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { -1e30 };
                assert_eq!(op.bias()[(i, j)], expect);
            }
        }
    }

    #[test]
    fn decompose_two_by_two() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.8, 0.6]]).unwrap();
        let op = decompose_dpb(&a, DEFAULT_NEG_BIAS).unwrap();
        assert_eq!(op.rescale()[0], 1.0);
        assert!((op.rescale()[1] - 1.4).abs() < 1e-15);
        assert!((op.probabilities()[(1, 0)] - 4.0 / 7.0).abs() < 1e-15);
        assert!((op.probabilities()[(1, 1)] - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn decompose_rejects_invalid_matrices() {
        let neg = Matrix::from_rows(&[[1.0, 0.0], [-0.1, 1.0]]).unwrap();
        assert!(matches!(
            decompose_dpb(&neg, 1e30),
            Err(Error::NegativeEntry { .. })
        ));
        let upper = Matrix::from_rows(&[[1.0, 0.2], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            decompose_dpb(&upper, 1e30),
            Err(Error::NotLowerTriangular { .. })
        ));
        let zero_row = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(
            decompose_dpb(&zero_row, 1e30),
            Err(Error::ZeroRowSum { row: 1, .. })
        ));
    }

    #[test]
    fn decompose_clamps_rounding_negatives() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [-1e-13, 1.0]]).unwrap();
        let op = decompose_dpb(&a, 1e30).unwrap();
        assert_eq!(op.matrix()[(1, 0)], 0.0);
    }

    #[test]
    fn bias_round_trips_through_softmax() {
        let op = espa_attention_analytic(12, g(0.3), g(0.05)).unwrap();
        let p = masked_row_softmax(op.bias(), op.mask(), op.neg_bias_const()).unwrap();
        assert!(p.max_abs_diff(op.probabilities()) < 1e-12);
    }

    #[test]
    fn equal_rates_give_identity_operator() {
        let op = espa_attention_analytic(6, g(0.2), g(0.2)).unwrap();
        assert_eq!(op.matrix(), &Matrix::identity(6));
        assert_eq!(op.rescale(), &[1.0; 6]);
        assert_eq!(op.bias()[(3, 1)], -DEFAULT_NEG_BIAS);
        let op = uspa_attention(5, 0.4, 0.4).unwrap();
        assert!(op.matrix().max_abs_diff(&Matrix::identity(5)) < 1e-12);
    }

    #[test]
    fn infinite_input_rate_gives_the_cholesky_factor() {
        let a = espa_matrix_analytic(10, DecayRate::Infinite, g(0.07)).unwrap();
        let l = exp_cholesky_analytic(10, g(0.07)).unwrap();
        assert!(a.max_abs_diff(l.matrix()) < 1e-15);
    }

    #[test]
    fn analytic_matches_triangular_solve_at_t8() {
        let a = espa_matrix_analytic(8, g(0.2), g(0.1)).unwrap();
        let l_out = exp_cholesky_analytic(8, g(0.1)).unwrap();
        let l_in = exp_cholesky_analytic(8, g(0.2)).unwrap();
        let oracle = solve_lower_triangular_right(l_out.matrix(), l_in.matrix()).unwrap();
        assert!(a.max_abs_diff(&oracle) < 1e-10);
        assert!(a.min_entry() >= -1e-12);
    }

    #[test]
    fn order_violations() {
        assert!(matches!(
            espa_attention_analytic(4, g(0.1), g(0.2)),
            Err(Error::OrderViolation(_))
        ));
        assert!(matches!(
            uspa_attention(4, 0.5, 0.2),
            Err(Error::OrderViolation(_))
        ));
        assert!(matches!(
            uspa_attention(4, 0.5, 1.0),
            Err(Error::RhoOutOfRange(_))
        ));
    }

    #[test]
    fn uspa_two_by_two() {
        let op = uspa_attention(2, 0.0, 0.8).unwrap();
        let expect = Matrix::from_rows(&[[1.0, 0.0], [0.8, 0.6]]).unwrap();
        assert!(op.matrix().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn uspa_t64_is_non_negative() {
        let a =
            numeric_attention_matrix(64, FamilyMember::Uniform(0.2), FamilyMember::Uniform(0.5))
                .unwrap();
        assert!(a.min_entry() >= -1e-12);
    }

    #[test]
    fn diagonal_is_ratio_of_helpers() {
        let (gi, go) = (g(0.4), g(0.15));
        let a = espa_matrix_analytic(20, gi, go).unwrap();
        for i in 1..20 {
            assert!((a[(i, i)] - go.a() / gi.a()).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_rows_are_attenuated() {
        let op = espa_attention_analytic(30, g(0.5), g(0.01)).unwrap();
        for (i, row) in op.probabilities().row_iter().enumerate().skip(1) {
            let nonzero = row.iter().filter(|&&p| p > 0.0).count();
            let norm = row.iter().map(|p| p * p).sum::<f64>().sqrt();
            if nonzero > 1 {
                assert!(norm < 1.0, "row {i} norm {norm}");
            }
        }
    }
}
