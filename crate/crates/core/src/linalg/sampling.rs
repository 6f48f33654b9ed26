use super::{Matrix, RngStream};

fn standard_gaussian(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

// Q factor of a tall Gaussian draw with columns sign-corrected so that R has a
// positive diagonal; this makes the result Haar-distributed.
fn haar_columns(n: usize, k: usize, rng: &mut RngStream) -> Matrix {
    let g = standard_gaussian(n, k, rng).to_nalgebra();
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Matrix::from_nalgebra(&q)
}

/// Uniformly distributed `n×n` orthogonal matrix.
pub fn sample_orthogonal(n: usize, rng: &mut RngStream) -> Matrix {
    assert!(n >= 1);
    haar_columns(n, n, rng)
}

/// `k` orthonormal rows of length `n`, distributed as the first `k` rows of a
/// Haar orthogonal `n×n` matrix. Requires `k ≤ n`.
pub fn sample_orthonormal_rows(k: usize, n: usize, rng: &mut RngStream) -> Matrix {
    assert!(k >= 1 && k <= n, "need 1 <= k <= n");
    haar_columns(n, k, rng).transpose()
}

/// I.i.d. `N(0, 1/rows)` entries: fan-in initialization under the `X·W`
/// convention, where `rows` is the input dimension.
pub fn sample_gaussian_fan_in(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
    assert!(rows >= 1 && cols >= 1);
    let std = (rows as f64).recip().sqrt();
    Matrix::from_fn(rows, cols, |_, _| std * rng.standard_normal())
}
