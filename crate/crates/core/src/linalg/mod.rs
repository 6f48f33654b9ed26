//! Dense linear algebra and random sampling primitives.
//!
//! Everything here is domain-agnostic: matrices are plain `f64` row-major
//! buffers, decompositions surface failure instead of regularizing, and every
//! sampler draws from an explicit [`RngStream`].

mod decomp;
mod matrix;
mod rng;
mod sampling;
mod softmax;

pub use decomp::{
    cholesky, inverse_symmetric_sqrt, solve_lower_triangular_right, symmetric_eigenvalues,
    symmetric_sqrt, PIVOT_TOLERANCE, SYMMETRY_TOLERANCE,
};
pub use matrix::Matrix;
pub use rng::RngStream;
pub use sampling::{sample_gaussian_fan_in, sample_orthogonal, sample_orthonormal_rows};
pub use softmax::{causal_mask, masked_row_softmax};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("triangular factor is singular (diagonal {value:e} at index {index})")]
    SingularFactor { index: usize, value: f64 },
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
