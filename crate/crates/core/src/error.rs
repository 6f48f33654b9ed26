use thiserror::Error;

use crate::linalg::LinalgError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("rho {0} out of range [0, 1)")]
    RhoOutOfRange(f64),
    #[error("decay rate {0} out of range: must be positive or inf")]
    GammaOutOfRange(f64),
    #[error("order violation: {0}")]
    OrderViolation(String),
    #[error("row {row} of the attention matrix sums to {sum:e}")]
    ZeroRowSum { row: usize, sum: f64 },
    #[error("attention entry ({row}, {col}) = {value:e} is negative beyond tolerance")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("attention entry ({row}, {col}) = {value:e} lies above the diagonal")]
    NotLowerTriangular { row: usize, col: usize, value: f64 },
    #[error("shortcut weight {alpha} too large for attention diagonal {lambda0}")]
    ShortcutTooLarge { lambda0: f64, alpha: f64 },
    #[error("kernel diagonal entry {index} is {value:e}, cannot normalize")]
    DegenerateDiagonal { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("finite-width kernel deviates by {deviation:e} at block {block}")]
    ExactnessViolated { block: usize, deviation: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("block {block}: {source}")]
    AtBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps `self` with the index of the block that produced it.
    pub fn at_block(self, block: usize) -> Error {
        match self {
            Error::AtBlock { .. } => self,
            other => Error::AtBlock {
                block,
                source: Box::new(other),
            },
        }
    }

    /// The underlying error with any block context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtBlock { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by bad parameters rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self.root(),
            Error::RhoOutOfRange(_)
                | Error::GammaOutOfRange(_)
                | Error::OrderViolation(_)
                | Error::ShortcutTooLarge { .. }
                | Error::DimensionMismatch(_)
                | Error::InvalidConfig(_)
        )
    }
}
