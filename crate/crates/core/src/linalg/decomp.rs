use nalgebra::SymmetricEigen;

use super::{LinalgError, Matrix};

/// Pivots and triangular diagonals at or below this magnitude are treated as
/// zero.
pub const PIVOT_TOLERANCE: f64 = 1e-14;

/// Relative (to `max(1, ‖m‖_max)`) asymmetry accepted by symmetric routines.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

fn check_symmetric(m: &Matrix) -> Result<(), LinalgError> {
    if !m.is_square() {
        return Err(LinalgError::ShapeMismatch {
            expected: (m.rows(), m.rows()),
            found: m.shape(),
        });
    }
    let asymmetry = m.asymmetry();
    if asymmetry > SYMMETRY_TOLERANCE * m.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { asymmetry });
    }
    Ok(())
}

/// Lower-triangular Cholesky factor `L` with positive diagonal, `L·Lᵀ = m`.
///
/// No jitter is added: a pivot `≤ 1e-14` is reported as
/// [`LinalgError::NotPositiveDefinite`].
pub fn cholesky(m: &Matrix) -> Result<Matrix, LinalgError> {
    check_symmetric(m)?;
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (l.row(i), l.row(j));
            let dot: f64 = li[..j].iter().zip(&lj[..j]).map(|(a, b)| a * b).sum();
            let s = m[(i, j)] - dot;
            if i == j {
                if s <= PIVOT_TOLERANCE {
                    return Err(LinalgError::NotPositiveDefinite { index: i, pivot: s });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Solves `X · l = a` for `X`, i.e. returns `a · l⁻¹` for lower-triangular `l`.
pub fn solve_lower_triangular_right(a: &Matrix, l: &Matrix) -> Result<Matrix, LinalgError> {
    let n = l.rows();
    if !l.is_square() || a.cols() != n {
        return Err(LinalgError::ShapeMismatch {
            expected: (a.rows(), n),
            found: a.shape(),
        });
    }
    if let Some((index, value)) = l
        .diag()
        .into_iter()
        .enumerate()
        .find(|(_, d)| d.abs() <= PIVOT_TOLERANCE)
    {
        return Err(LinalgError::SingularFactor { index, value });
    }
    // Each row x of X satisfies lᵀ xᵀ = aᵀ: back substitution on an upper
    // triangular system.
    let mut x = Matrix::zeros(a.rows(), n);
    for r in 0..a.rows() {
        let rhs = a.row(r);
        let row = x.row_mut(r);
        for j in (0..n).rev() {
            let mut s = rhs[j];
            for k in (j + 1)..n {
                s -= row[k] * l[(k, j)];
            }
            row[j] = s / l[(j, j)];
        }
    }
    Ok(x)
}

fn eigen(m: &Matrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, LinalgError> {
    check_symmetric(m)?;
    Ok(SymmetricEigen::new(m.symmetrized().to_nalgebra()))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>, LinalgError> {
    let mut values: Vec<f64> = eigen(m)?.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

fn spectral_map(
    m: &Matrix,
    f: impl Fn(usize, f64) -> Result<f64, LinalgError>,
) -> Result<Matrix, LinalgError> {
    let eig = eigen(m)?;
    let n = m.rows();
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = f(k, lambda)?;
        scaled.column_mut(k).scale_mut(s);
    }
    let out = scaled * eig.eigenvectors.transpose();
    debug_assert_eq!(out.nrows(), n);
    Ok(Matrix::from_nalgebra(&out).symmetrized())
}

/// Symmetric PSD square root `S` with `S·S = m`.
pub fn symmetric_sqrt(m: &Matrix) -> Result<Matrix, LinalgError> {
    let scale = m.max_abs().max(1.0);
    spectral_map(m, |index, lambda| {
        if lambda < -1e-10 * scale {
            Err(LinalgError::NotPositiveDefinite {
                index,
                pivot: lambda,
            })
        } else {
            Ok(lambda.max(0.0).sqrt())
        }
    })
}

/// Inverse of the symmetric square root of a positive definite matrix.
pub fn inverse_symmetric_sqrt(m: &Matrix) -> Result<Matrix, LinalgError> {
    spectral_map(m, |index, lambda| {
        if lambda <= PIVOT_TOLERANCE {
            Err(LinalgError::NotPositiveDefinite {
                index,
                pivot: lambda,
            })
        } else {
            Ok(1.0 / lambda.sqrt())
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RngStream;
    use proptest::prelude::*;

    fn random_pd(n: usize, seed: u64) -> Matrix {
        let mut rng = RngStream::new(seed);
        let g = Matrix::from_fn(n, n, |_, _| rng.standard_normal());
        let mut m = g.matmul_transposed(&g).unwrap().scale(1.0 / n as f64);
        for i in 0..n {
            m[(i, i)] += 0.5;
        }
        m.symmetrized()
    }

    #[test]
    fn cholesky_of_identity_is_identity() {
        assert_eq!(cholesky(&Matrix::identity(3)).unwrap(), Matrix::identity(3));
    }

    #[test]
    fn cholesky_two_by_two_closed_form() {
        let m = Matrix::from_rows(&[[1.0, 0.8], [0.8, 1.0]]).unwrap();
        let l = cholesky(&m).unwrap();
        let expect = Matrix::from_rows(&[[1.0, 0.0], [0.8, 0.6]]).unwrap();
        assert!(l.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn cholesky_rejects_bad_input() {
        let asym = Matrix::from_rows(&[[1.0, 0.5], [0.4, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&asym),
            Err(LinalgError::NotSymmetric { .. })
        ));
        let singular = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&singular),
            Err(LinalgError::NotPositiveDefinite { index: 1, .. })
        ));
        let indefinite = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(cholesky(&indefinite).is_err());
    }

    #[test]
    fn cholesky_round_trip_up_to_256() {
        for (n, seed) in [(1, 1), (7, 2), (64, 3), (256, 4)] {
            let m = random_pd(n, seed);
            let l = cholesky(&m).unwrap();
            assert!(l.is_lower_triangular());
            assert!(l.diag().iter().all(|&d| d > 0.0));
            let err = l.matmul_transposed(&l).unwrap().max_abs_diff(&m);
            assert!(err <= 1e-10 * m.max_abs(), "n={n} err={err:e}");
        }
    }

    #[test]
    fn solve_identity_and_self() {
        let id = Matrix::identity(4);
        assert_eq!(solve_lower_triangular_right(&id, &id).unwrap(), id);
        let l = cholesky(&random_pd(6, 9)).unwrap();
        let x = solve_lower_triangular_right(&l, &l).unwrap();
        assert!(x.max_abs_diff(&Matrix::identity(6)) < 1e-12);
    }

    #[test]
    fn solve_rejects_singular_factor() {
        let mut l = Matrix::identity(3);
        l[(1, 1)] = 0.0;
        assert!(matches!(
            solve_lower_triangular_right(&Matrix::identity(3), &l),
            Err(LinalgError::SingularFactor { index: 1, .. })
        ));
    }

    #[test]
    fn symmetric_sqrt_squares_back() {
        let m = random_pd(12, 5);
        let s = symmetric_sqrt(&m).unwrap();
        assert!(s.matmul(&s).unwrap().max_abs_diff(&m) < 1e-12);
        let inv = inverse_symmetric_sqrt(&m).unwrap();
        assert!(s.matmul(&inv).unwrap().max_abs_diff(&Matrix::identity(12)) < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn solve_right_inverts_multiplication(n in 1usize..24, rows in 1usize..8, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed);
            // Well-conditioned lower factor: unit-ish diagonal, small off-diagonal.
            let l = Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                std::cmp::Ordering::Equal => 1.0 + rng.uniform(),
                std::cmp::Ordering::Greater => 0.3 * rng.standard_normal() / n as f64,
                std::cmp::Ordering::Less => 0.0,
            });
            let a = Matrix::from_fn(rows, n, |_, _| rng.standard_normal());
            let x = solve_lower_triangular_right(&a, &l).unwrap();
            let back = x.matmul(&l).unwrap();
            prop_assert!(back.max_abs_diff(&a) <= 1e-10 * a.max_abs().max(1.0));
        }

        #[test]
        fn cholesky_round_trips_random_pd(n in 1usize..48, seed in any::<u64>()) {
            let m = random_pd(n, seed);
            let l = cholesky(&m).unwrap();
            prop_assert!(l.matmul_transposed(&l).unwrap().max_abs_diff(&m) <= 1e-10 * m.max_abs());
        }
    }
}
