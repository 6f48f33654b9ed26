use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{causal_mask, masked_row_softmax, Matrix};

const DEGENERATE_DIAGONAL: f64 = 1e-14;

/// `A·Σ·Aᵀ`, symmetrized.
pub fn attention_step(sigma: &KernelMatrix, a: &Matrix) -> Result<KernelMatrix> {
    KernelMatrix::symmetrize(&a.congruence(sigma.matrix())?)
}

/// `(1/h)·Σ_n A_n·Σ·A_nᵀ`, symmetrized.
pub fn multihead_attention_step(sigma: &KernelMatrix, heads: &[Matrix]) -> Result<KernelMatrix> {
    let Some(first) = heads.first() else {
        return Err(Error::InvalidConfig("at least one head is required".into()));
    };
    let mut acc = first.congruence(sigma.matrix())?;
    for a in &heads[1..] {
        acc = acc.lincomb(1.0, &a.congruence(sigma.matrix())?, 1.0)?;
    }
    KernelMatrix::symmetrize(&acc.scale(1.0 / heads.len() as f64))
}

/// Geometric ALiBi slopes `2^{−8n/h}` for `n = 1..=h`.
pub fn alibi_slopes(h: usize) -> Vec<f64> {
    (1..=h)
        .map(|n| (-8.0 * n as f64 / h as f64).exp2())
        .collect()
}

/// Causal softmax attention with zero query-key logits and ALiBi biases
/// `−m_n·(i−j)`, one matrix per head.
pub fn alibi_attention_matrices(t: usize, h: usize) -> Result<Vec<Matrix>> {
    if h == 0 {
        return Err(Error::InvalidConfig("at least one head is required".into()));
    }
    let mask = causal_mask(t);
    alibi_slopes(h)
        .into_iter()
        .map(|m| {
            let logits =
                Matrix::from_fn(t, t, |i, j| if j <= i { -m * (i - j) as f64 } else { 0.0 });
            Ok(masked_row_softmax(&logits, &mask, 1.0)?)
        })
        .collect()
}

/// `α²·Σ + β²·residual`.
pub fn skip_step(
    sigma: &KernelMatrix,
    alpha: f64,
    beta: f64,
    residual: &KernelMatrix,
) -> Result<KernelMatrix> {
    let m = sigma
        .matrix()
        .lincomb(alpha * alpha, residual.matrix(), beta * beta)?;
    KernelMatrix::symmetrize(&m)
}

/// `diag(Σ)^{-1/2}·Σ·diag(Σ)^{-1/2}`: RMSNorm at initialization.
pub fn normalize_step(sigma: &KernelMatrix) -> Result<KernelMatrix> {
    let diag = sigma.diag();
    if let Some((index, &value)) = diag
        .iter()
        .enumerate()
        .find(|(_, &d)| d.is_nan() || d <= DEGENERATE_DIAGONAL)
    {
        return Err(Error::DegenerateDiagonal { index, value });
    }
    let s: Vec<f64> = diag.iter().map(|d| d.sqrt().recip()).collect();
    let mut m = sigma.matrix().scale_rows_cols(&s, &s);
    for i in 0..m.rows() {
        m[(i, i)] = 1.0;
    }
    KernelMatrix::symmetrize(&m)
}
