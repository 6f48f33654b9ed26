use serde::Serialize;

use super::steps::normalize_step;
use crate::error::Result;
use crate::kernels::KernelMatrix;

/// Summary of how close a kernel is to rank collapse.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollapseMetrics {
    pub mean_offdiag_cosine: f64,
    pub min_offdiag_cosine: f64,
    /// `max |cos_ij − 1|` over off-diagonal pairs.
    pub collapse_distance: f64,
    pub max_diag: f64,
    pub min_diag: f64,
}

pub fn rank_collapse_metrics(sigma: &KernelMatrix) -> Result<CollapseMetrics> {
    let cos = normalize_step(sigma)?;
    Ok(metrics_from_parts(sigma, &cos))
}

pub(crate) fn metrics_from_parts(sigma: &KernelMatrix, cos: &KernelMatrix) -> CollapseMetrics {
    let t = cos.size();
    let (mut sum, mut min, mut dist) = (0.0, f64::INFINITY, 0.0f64);
    for i in 0..t {
        for j in 0..t {
            if i != j {
                let c = cos.matrix()[(i, j)];
                sum += c;
                min = min.min(c);
                dist = dist.max((c - 1.0).abs());
            }
        }
    }
    let pairs = (t * t.saturating_sub(1)).max(1) as f64;
    let diag = sigma.diag();
    CollapseMetrics {
        mean_offdiag_cosine: sum / pairs,
        min_offdiag_cosine: if t > 1 { min } else { 1.0 },
        collapse_distance: dist,
        max_diag: diag.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_diag: diag.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{exp_kernel, DecayRate};
    use crate::linalg::Matrix;

    #[test]
    fn identity_is_far_from_collapse() {
        let m = rank_collapse_metrics(&KernelMatrix::identity(10)).unwrap();
        assert_eq!(m.mean_offdiag_cosine, 0.0);
        assert_eq!(m.collapse_distance, 1.0);
        assert_eq!((m.max_diag, m.min_diag), (1.0, 1.0));
    }

    #[test]
    fn near_rank_one_is_collapsed() {
        let mut prev = 0.0;
        for eps in [1.0, 1e-2, 1e-4, 1e-8] {
            let k = KernelMatrix::new(Matrix::from_fn(6, 6, |i, j| {
                1.0 + if i == j { eps } else { 0.0 }
            }))
            .unwrap();
            let m = rank_collapse_metrics(&k).unwrap();
            assert!(m.mean_offdiag_cosine > prev);
            prev = m.mean_offdiag_cosine;
        }
        assert!(1.0 - prev < 1e-7);
    }

    #[test]
    fn diagonal_extremes_use_raw_kernel() {
        let k = KernelMatrix::new(Matrix::diagonal(&[2.0, 0.5, 1.0])).unwrap();
        let m = rank_collapse_metrics(&k).unwrap();
        assert_eq!((m.max_diag, m.min_diag), (2.0, 0.5));
    }

    #[test]
    fn exponential_kernel_cosines() {
        let g = DecayRate::new(0.1).unwrap();
        let m = rank_collapse_metrics(&exp_kernel(4, g).unwrap()).unwrap();
        let expect = (6.0 * (-0.1f64).exp() + 4.0 * (-0.2f64).exp() + 2.0 * (-0.3f64).exp()) / 12.0;
        assert!((m.mean_offdiag_cosine - expect).abs() < 1e-15);
        assert!((m.min_offdiag_cosine - (-0.3f64).exp()).abs() < 1e-15);
    }
}
