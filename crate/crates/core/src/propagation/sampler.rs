use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{Matrix, RngStream};

/// Rule for placing repeated tokens in a length-`T` sequence.
///
/// All three keep repeats independent of location. Only `Balanced` and
/// `Vocabulary` (when `1/r` is an integer) have `E[Σ_0] = (1−r)·I + r·11ᵀ`;
/// `Copy` has a location-dependent expectation, see [`expected_input_kernel`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepeatSampler {
    /// Near-equal id groups over a shuffled sequence, with the group count
    /// randomized between two neighbours so that the pair fraction is `r`.
    #[default]
    Balanced,
    /// Ids drawn i.i.d. from a vocabulary of `round(1/r)` symbols.
    Vocabulary,
    /// Each location after the first copies a uniformly chosen earlier
    /// location's id with probability `r`, else gets a fresh id.
    Copy,
}

impl FromStr for RepeatSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "balanced" => Ok(Self::Balanced),
            "vocabulary" => Ok(Self::Vocabulary),
            "copy" => Ok(Self::Copy),
            other => Err(Error::InvalidConfig(format!("unknown sampler {other:?}"))),
        }
    }
}

fn check_fraction(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::RhoOutOfRange(r))
    }
}

fn vocabulary_size(r: f64) -> Option<usize> {
    (r > 0.0).then(|| ((1.0 / r).round() as usize).max(1))
}

// Group sizes for `v` near-equal groups over `t` locations.
fn group_sizes(t: usize, v: usize) -> Vec<usize> {
    let (base, extra) = (t / v, t % v);
    (0..v).map(|g| base + usize::from(g < extra)).collect()
}

fn ordered_pairs(sizes: &[usize]) -> usize {
    sizes.iter().map(|s| s * s.saturating_sub(1)).sum()
}

/// Group counts `(v_hi, v_lo)` and the probability of using `v_hi`, chosen so
/// the expected number of ordered repeated pairs is `r·T·(T−1)`.
fn balanced_mixture(t: usize, r: f64) -> (usize, usize, f64) {
    let target = r * (t * (t - 1)) as f64;
    let v_hi = (1..=t)
        .rev()
        .find(|&v| ordered_pairs(&group_sizes(t, v)) as f64 >= target)
        .unwrap_or(1);
    let hi = ordered_pairs(&group_sizes(t, v_hi)) as f64;
    if v_hi == t || hi == target {
        return (v_hi, v_hi, 1.0);
    }
    let lo = ordered_pairs(&group_sizes(t, v_hi + 1)) as f64;
    (v_hi, v_hi + 1, (target - lo) / (hi - lo))
}

/// Token ids for one sequence.
pub fn sample_token_ids(
    t: usize,
    r: f64,
    sampler: RepeatSampler,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    check_fraction(r)?;
    if t == 0 {
        return Err(Error::InvalidConfig(
            "sequence length must be positive".into(),
        ));
    }
    if r == 0.0 {
        return Ok((0..t).collect());
    }
    let ids = match sampler {
        RepeatSampler::Balanced => {
            let (v_hi, v_lo, w) = balanced_mixture(t, r);
            let v = if rng.bernoulli(w) { v_hi } else { v_lo };
            let mut ids: Vec<usize> = group_sizes(t, v)
                .into_iter()
                .enumerate()
                .flat_map(|(g, s)| std::iter::repeat_n(g, s))
                .collect();
            rng.shuffle(&mut ids);
            ids
        }
        RepeatSampler::Vocabulary => {
            let v = vocabulary_size(r).unwrap();
            (0..t).map(|_| rng.below(v)).collect()
        }
        RepeatSampler::Copy => {
            let mut ids: Vec<usize> = (0..t).collect();
            for i in 1..t {
                if rng.bernoulli(r) {
                    ids[i] = ids[rng.below(i)];
                }
            }
            ids
        }
    };
    Ok(ids)
}

/// `Σ_0[i, j] = 1` if the ids agree, else 0.
pub fn id_kernel(ids: &[usize]) -> KernelMatrix {
    let n = ids.len();
    KernelMatrix::new(Matrix::from_fn(n, n, |i, j| {
        f64::from(u8::from(ids[i] == ids[j]))
    }))
    .expect("id kernel is symmetric")
}

/// Input kernel for one sequence under the default sampler.
pub fn sample_input_kernel(t: usize, r: f64, rng: &mut RngStream) -> Result<KernelMatrix> {
    sample_input_kernel_with(t, r, RepeatSampler::default(), rng)
}

pub fn sample_input_kernel_with(
    t: usize,
    r: f64,
    sampler: RepeatSampler,
    rng: &mut RngStream,
) -> Result<KernelMatrix> {
    Ok(id_kernel(&sample_token_ids(t, r, sampler, rng)?))
}

/// Exact `E[Σ_0]` under `sampler`.
pub fn expected_input_kernel(t: usize, r: f64, sampler: RepeatSampler) -> Result<Matrix> {
    check_fraction(r)?;
    let off = match sampler {
        _ if r == 0.0 => 0.0,
        RepeatSampler::Balanced => r,
        RepeatSampler::Vocabulary => 1.0 / vocabulary_size(r).unwrap() as f64,
        RepeatSampler::Copy => return Ok(copy_expectation(t, r)),
    };
    Ok(Matrix::from_fn(t, t, |i, j| if i == j { 1.0 } else { off }))
}

// P(id_i = id_j) for the copy rule: location i copies k < i with probability
// r/i, and id_k = id_j with probability 1 when k = j, else s(k, j).
fn copy_expectation(t: usize, r: f64) -> Matrix {
    let mut s = Matrix::identity(t);
    for i in 1..t {
        for j in 0..i {
            let through: f64 = (0..i).filter(|&k| k != j).map(|k| s[(k, j)]).sum();
            let p = r / i as f64 * (1.0 + through);
            s[(i, j)] = p;
            s[(j, i)] = p;
        }
    }
    s
}

/// Mean of the off-diagonal entries of [`expected_input_kernel`].
pub fn expected_offdiag_mean(t: usize, r: f64, sampler: RepeatSampler) -> Result<f64> {
    let e = expected_input_kernel(t, r, sampler)?;
    Ok(offdiag_mean(&e))
}

pub(crate) fn offdiag_mean(m: &Matrix) -> f64 {
    let n = m.rows();
    if n < 2 {
        return 0.0;
    }
    let total: f64 = m.as_slice().iter().sum::<f64>() - m.diag().iter().sum::<f64>();
    total / (n * (n - 1)) as f64
}
