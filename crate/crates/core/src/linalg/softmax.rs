use super::{LinalgError, Matrix};

/// Causal mask `M_ij = 1{i ≥ j}`.
pub fn causal_mask(t: usize) -> Matrix {
    Matrix::from_fn(t, t, |i, j| if i >= j { 1.0 } else { 0.0 })
}

/// Row-wise softmax of `M∘logits − Γ(1−M)`.
///
/// Masked positions are dropped from the normalization entirely, so they
/// receive exactly zero probability for any `gamma_const`; the row maximum is
/// subtracted before exponentiation. Masks with an all-zero row are rejected.
pub fn masked_row_softmax(
    logits: &Matrix,
    mask: &Matrix,
    gamma_const: f64,
) -> Result<Matrix, LinalgError> {
    logits.check_same_shape(mask)?;
    if gamma_const.is_nan() || gamma_const <= 0.0 {
        return Err(LinalgError::InvalidArgument(format!(
            "masking constant must be positive, got {gamma_const}"
        )));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let (z, m) = (logits.row(i), mask.row(i));
        if let Some(bad) = m.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(LinalgError::InvalidMask(format!(
                "entry {bad} in row {i} is not 0/1"
            )));
        }
        let max = z
            .iter()
            .zip(m)
            .filter(|(_, &keep)| keep == 1.0)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.contains(&1.0) {
            return Err(LinalgError::InvalidMask(format!("row {i} is fully masked")));
        }
        if max == f64::NEG_INFINITY {
            return Err(LinalgError::InvalidArgument(format!(
                "row {i} has no finite unmasked logit"
            )));
        }
        let row = out.row_mut(i);
        let mut total = 0.0;
        for ((o, &v), &keep) in row.iter_mut().zip(z).zip(m) {
            if keep == 1.0 {
                *o = (v - max).exp();
                total += *o;
            }
        }
        for o in row.iter_mut() {
            *o /= total;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_logits_give_uniform_causal_rows() {
        let p = masked_row_softmax(&Matrix::zeros(5, 5), &causal_mask(5), 1e30).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
                assert!((p[(i, j)] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn single_unmasked_entry_gets_all_mass() {
        let logits = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 * 10.0);
        let p = masked_row_softmax(&logits, &Matrix::identity(3), 1e30).unwrap();
        assert_eq!(p, Matrix::identity(3));
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let logits = Matrix::from_fn(2, 2, |_, j| 1e300 * (j as f64 + 1.0));
        let p = masked_row_softmax(&logits, &Matrix::from_fn(2, 2, |_, _| 1.0), 1.0).unwrap();
        assert!(p.is_finite());
        assert_eq!(p.row_sums(), vec![1.0, 1.0]);
    }

    #[test]
    fn rejects_bad_masks() {
        let z = Matrix::zeros(2, 2);
        let mut m = causal_mask(2);
        m[(0, 0)] = 0.0;
        assert!(matches!(
            masked_row_softmax(&z, &m, 1e30),
            Err(LinalgError::InvalidMask(_))
        ));
        m[(0, 0)] = 0.5;
        assert!(masked_row_softmax(&z, &m, 1e30).is_err());
        assert!(masked_row_softmax(&z, &causal_mask(2), 0.0).is_err());
    }
}
