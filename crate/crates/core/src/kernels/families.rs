use serde::{Deserialize, Serialize};

use super::DecayRate;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, LinalgError, Matrix, SYMMETRY_TOLERANCE};

/// Symmetric `T×T` location-wise kernel matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMatrix(Matrix);

impl KernelMatrix {
    /// Wraps `m` after checking it is square and symmetric.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(LinalgError::ShapeMismatch {
                expected: (m.rows(), m.rows()),
                found: m.shape(),
            }
            .into());
        }
        let asymmetry = m.asymmetry();
        if asymmetry > SYMMETRY_TOLERANCE * m.max_abs().max(1.0) {
            return Err(LinalgError::NotSymmetric { asymmetry }.into());
        }
        Ok(Self(m))
    }

    /// Symmetrizes `m` before wrapping it.
    pub fn symmetrize(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Self::new(m.clone());
        }
        Ok(Self(m.symmetrized()))
    }

    pub fn identity(t: usize) -> Self {
        Self(Matrix::identity(t))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn diag(&self) -> Vec<f64> {
        self.0.diag()
    }

    pub fn max_abs_diff(&self, other: &KernelMatrix) -> f64 {
        self.0.max_abs_diff(&other.0)
    }
}

/// Lower-triangular factor with strictly positive diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CholeskyFactor(Matrix);

impl CholeskyFactor {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square()
            || !m.is_lower_triangular()
            || m.diag().iter().any(|&d| d.is_nan() || d <= 0.0)
        {
            return Err(Error::InvalidConfig(
                "a Cholesky factor must be square, lower triangular, with positive diagonal".into(),
            ));
        }
        Ok(Self(m))
    }

    /// Numeric factor of `kernel`.
    pub fn of(kernel: &KernelMatrix) -> Result<Self> {
        Ok(Self(cholesky(kernel.matrix())?))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `L·Lᵀ`.
    pub fn gram(&self) -> KernelMatrix {
        KernelMatrix(
            self.0
                .matmul_transposed(&self.0)
                .expect("square factor")
                .symmetrized(),
        )
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::RhoOutOfRange(rho))
    }
}

fn check_size(t: usize) -> Result<()> {
    if t == 0 {
        return Err(Error::DimensionMismatch(
            "sequence length must be at least 1".into(),
        ));
    }
    Ok(())
}

/// `(1−ρ)·I + ρ·11ᵀ`.
pub fn uniform_kernel(t: usize, rho: f64) -> Result<KernelMatrix> {
    check_size(t)?;
    check_rho(rho)?;
    Ok(KernelMatrix(Matrix::from_fn(t, t, |i, j| {
        if i == j {
            1.0
        } else {
            rho
        }
    })))
}

/// `Σ_ij = exp(−γ|i−j|)`; the infinite rate gives the identity.
pub fn exp_kernel(t: usize, gamma: DecayRate) -> Result<KernelMatrix> {
    check_size(t)?;
    Ok(KernelMatrix(Matrix::from_fn(t, t, |i, j| {
        gamma.decay(i.abs_diff(j))
    })))
}

/// Closed-form Cholesky factor of [`exp_kernel`]:
/// the first column is `exp(−γ(i−1))`, every later column `j` is
/// `a(γ)·exp(−γ(i−j))` on and below the diagonal.
pub fn exp_cholesky_analytic(t: usize, gamma: DecayRate) -> Result<CholeskyFactor> {
    check_size(t)?;
    let a = gamma.a();
    Ok(CholeskyFactor(Matrix::from_fn(t, t, |i, j| {
        if j > i {
            0.0
        } else if j == 0 {
            gamma.decay(i)
        } else {
            a * gamma.decay(i - j)
        }
    })))
}

/// A member of one of the two kernel families, identified by its parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "param", rename_all = "lowercase")]
pub enum FamilyMember {
    Uniform(f64),
    Exponential(DecayRate),
}

impl FamilyMember {
    pub fn kernel(&self, t: usize) -> Result<KernelMatrix> {
        match *self {
            Self::Uniform(rho) => uniform_kernel(t, rho),
            Self::Exponential(gamma) => exp_kernel(t, gamma),
        }
    }
}

/// Checks that `input → output` moves toward larger off-diagonals within one
/// family: `ρ_in ≤ ρ_out`, or `γ_in ≥ γ_out`.
pub fn check_family_order(input: FamilyMember, output: FamilyMember) -> Result<()> {
    match (input, output) {
        (FamilyMember::Uniform(r_in), FamilyMember::Uniform(r_out)) => {
            check_rho(r_in)?;
            check_rho(r_out)?;
            if r_out < r_in {
                return Err(Error::OrderViolation(format!(
                    "rho_out ({r_out}) must be at least rho_in ({r_in})"
                )));
            }
            Ok(())
        }
        (FamilyMember::Exponential(g_in), FamilyMember::Exponential(g_out)) => {
            if !g_in.at_least(g_out) {
                return Err(Error::OrderViolation(format!(
                    "gamma_out ({g_out}) must not exceed gamma_in ({g_in})"
                )));
            }
            Ok(())
        }
        _ => Err(Error::InvalidConfig(
            "input and output kernels must belong to the same family".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;

    fn g(x: f64) -> DecayRate {
        DecayRate::new(x).unwrap()
    }

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_kernel(3, 0.0).unwrap(), KernelMatrix::identity(3));
        assert_eq!(
            uniform_kernel(2, 0.8).unwrap().into_matrix().to_rows(),
            vec![vec![1.0, 0.8], vec![0.8, 1.0]]
        );
        assert!(matches!(
            uniform_kernel(3, 1.0),
            Err(Error::RhoOutOfRange(_))
        ));
        assert!(matches!(
            uniform_kernel(3, -0.1),
            Err(Error::RhoOutOfRange(_))
        ));
    }

    #[test]
    fn uniform_top_eigenvalue_has_ones_eigenvector() {
        let (t, rho) = (7, 0.3);
        let k = uniform_kernel(t, rho).unwrap();
        let ones = Matrix::from_fn(t, 1, |_, _| 1.0);
        let kv = k.matrix().matmul(&ones).unwrap();
        let lambda = 1.0 + (t as f64 - 1.0) * rho;
        for i in 0..t {
            assert!((kv[(i, 0)] - lambda).abs() < 1e-14);
        }
        let eig = symmetric_eigenvalues(k.matrix()).unwrap();
        assert!((eig[t - 1] - lambda).abs() < 1e-12);
    }

    #[test]
    fn exp_kernel_examples() {
        assert_eq!(
            exp_kernel(4, DecayRate::Infinite).unwrap(),
            KernelMatrix::identity(4)
        );
        let k = exp_kernel(2, g(0.005)).unwrap();
        assert!((k.matrix()[(0, 1)] - 0.995_012_479_192_682_3).abs() < 1e-15);
        let k = exp_kernel(3, g(std::f64::consts::LN_2)).unwrap();
        let expect =
            Matrix::from_rows(&[[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]]).unwrap();
        assert!(k.matrix().max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn analytic_factor_reproduces_kernel() {
        assert_eq!(
            exp_cholesky_analytic(5, DecayRate::Infinite)
                .unwrap()
                .into_matrix(),
            Matrix::identity(5)
        );
        for t in [1, 2, 9, 40] {
            for gamma in [0.005, 0.3, 3.0] {
                let l = exp_cholesky_analytic(t, g(gamma)).unwrap();
                let k = exp_kernel(t, g(gamma)).unwrap();
                assert!(l.gram().max_abs_diff(&k) < 1e-12, "t={t} gamma={gamma}");
            }
        }
    }

    #[test]
    fn analytic_factor_matches_numeric_at_64() {
        let l = exp_cholesky_analytic(64, g(0.2)).unwrap();
        let numeric = CholeskyFactor::of(&exp_kernel(64, g(0.2)).unwrap()).unwrap();
        assert!(l.matrix().max_abs_diff(numeric.matrix()) < 1e-10);
    }

    #[test]
    fn family_order() {
        use FamilyMember::*;
        assert!(check_family_order(Uniform(0.1), Uniform(0.2)).is_ok());
        assert!(check_family_order(Uniform(0.3), Uniform(0.2)).is_err());
        assert!(check_family_order(Exponential(g(0.3)), Exponential(g(0.2))).is_ok());
        assert!(check_family_order(Exponential(g(0.1)), Exponential(g(0.2))).is_err());
        assert!(check_family_order(Uniform(0.1), Exponential(g(0.2))).is_err());
    }
}
