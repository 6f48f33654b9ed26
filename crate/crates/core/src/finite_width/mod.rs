//! Finite-width attention layers with explicit weights.
//!
//! A layer realizes a fixed attention matrix `A = diag(D)·softmax(B + M)` as
//! masked softmax attention with zero query weights, so the query-key term
//! vanishes and `Attn(X) = A·X·W^V`. With orthogonal value and output weights
//! the empirical kernel follows the infinite-width prediction exactly.

use rand::RngCore;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{
    espa_attention_analytic, exp_kernel, AttentionOperator, DecayRate, KernelMatrix,
};
use crate::linalg::{
    causal_mask, masked_row_softmax, sample_gaussian_fan_in, sample_orthogonal,
    sample_orthonormal_rows, Matrix, RngStream,
};
use crate::propagation::{id_kernel, sample_token_ids, RepeatSampler};
use crate::schedules::espa_schedule;

/// Deviation allowed by [`validate_exactness`].
pub const EXACTNESS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Haar orthogonal value (concatenated over heads) and output weights.
    Orthogonal,
    /// Fan-in Gaussian `N(0, 1/d)` value and output weights.
    Gaussian,
    /// Orthogonal value/output weights, and query/key entries `N(0, σ²/d)`
    /// instead of a zero query.
    SmallQk(f64),
}

/// Rows of `X` are the representation vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceActivations(Matrix);

impl SequenceActivations {
    pub fn new(x: Matrix) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::InvalidConfig("activations must be finite".into()));
        }
        Ok(Self(x))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

fn split_columns(w: &Matrix, h: usize) -> Vec<Matrix> {
    let dh = w.cols() / h;
    (0..h)
        .map(|n| w.submatrix(0, w.rows(), n * dh, dh))
        .collect()
}

fn check_heads(d: usize, h: usize) -> Result<usize> {
    if h == 0 || d == 0 || !d.is_multiple_of(h) {
        return Err(Error::DimensionMismatch(format!(
            "width {d} is not divisible by {h} heads"
        )));
    }
    Ok(d / h)
}

fn check_width(x: &SequenceActivations, d: usize) -> Result<()> {
    if x.width() != d {
        return Err(Error::DimensionMismatch(format!(
            "activations have width {}, layer expects {d}",
            x.width()
        )));
    }
    Ok(())
}

/// Value/output weights plus query/key weights (`None` query means exactly zero).
fn sample_weights(
    d: usize,
    h: usize,
    mode: InitMode,
    rng: &RngStream,
) -> (Option<Vec<Matrix>>, Vec<Matrix>, Vec<Matrix>, Matrix) {
    let dh = d / h;
    let (mut rv, mut ro, mut rq, mut rk) = (rng.fork(1), rng.fork(2), rng.fork(3), rng.fork(4));
    let (value, output) = match mode {
        InitMode::Gaussian => (
            sample_gaussian_fan_in(d, d, &mut rv),
            sample_gaussian_fan_in(d, d, &mut ro),
        ),
        InitMode::Orthogonal | InitMode::SmallQk(_) => {
            (sample_orthogonal(d, &mut rv), sample_orthogonal(d, &mut ro))
        }
    };
    let mut key: Vec<Matrix> = (0..h)
        .map(|_| sample_gaussian_fan_in(d, dh, &mut rk))
        .collect();
    let query = match mode {
        InitMode::SmallQk(sigma) => {
            key.iter_mut().for_each(|k| *k = k.scale(sigma));
            Some(
                (0..h)
                    .map(|_| sample_gaussian_fan_in(d, dh, &mut rq).scale(sigma))
                    .collect(),
            )
        }
        _ => None,
    };
    (query, key, split_columns(&value, h), output)
}

/// Concatenate per-head `T×d_h` outputs and apply `W^O`.
fn combine_heads(per_head: &[Matrix], output: &Matrix) -> Result<SequenceActivations> {
    SequenceActivations::new(Matrix::hstack(per_head)?.matmul(output)?)
}

/// Modified E-SPA attention layer.
#[derive(Clone, Debug)]
pub struct AttentionLayerParams {
    query: Option<Vec<Matrix>>,
    key: Vec<Matrix>,
    value: Vec<Matrix>,
    output: Matrix,
    operator: AttentionOperator,
}

impl AttentionLayerParams {
    pub fn heads(&self) -> usize {
        self.value.len()
    }

    pub fn width(&self) -> usize {
        self.output.rows()
    }

    pub fn head_dim(&self) -> usize {
        self.width() / self.heads()
    }

    pub fn operator(&self) -> &AttentionOperator {
        &self.operator
    }

    /// True when every `W^Q_n` is zero.
    pub fn query_is_zero(&self) -> bool {
        self.query.is_none()
    }

    pub fn query(&self, n: usize) -> Matrix {
        match &self.query {
            Some(q) => q[n].clone(),
            None => Matrix::zeros(self.width(), self.head_dim()),
        }
    }

    pub fn key(&self, n: usize) -> &Matrix {
        &self.key[n]
    }

    /// `[W^V_1 … W^V_h]`.
    pub fn value_concat(&self) -> Matrix {
        Matrix::hstack(&self.value).expect("value blocks share row count")
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Pre-softmax logits of head `n`: `(X·W^Q_n)(X·W^K_n)ᵀ/√d_h + B`.
    pub fn logits(&self, n: usize, x: &SequenceActivations) -> Result<Matrix> {
        check_width(x, self.width())?;
        let bias = self.operator.bias();
        match &self.query {
            None => Ok(bias.clone()),
            Some(q) => {
                let qx = x.matrix().matmul(&q[n])?;
                let kx = x.matrix().matmul(&self.key[n])?;
                let scale = (self.head_dim() as f64).sqrt().recip();
                Ok(qx.matmul_transposed(&kx)?.lincomb(scale, bias, 1.0)?)
            }
        }
    }

    /// `diag(D)·softmax(logits)` for each head.
    pub fn realized_attention(&self, x: &SequenceActivations) -> Result<Vec<Matrix>> {
        let ones = vec![1.0; self.operator.size()];
        (0..self.heads())
            .map(|n| {
                let p = masked_row_softmax(
                    &self.logits(n, x)?,
                    self.operator.mask(),
                    self.operator.neg_bias_const(),
                )?;
                Ok(p.scale_rows_cols(self.operator.rescale(), &ones))
            })
            .collect()
    }
}

/// Wraps a prebuilt operator with freshly sampled weights.
pub fn build_layer(
    operator: AttentionOperator,
    d: usize,
    h: usize,
    mode: InitMode,
    rng: &mut RngStream,
) -> Result<AttentionLayerParams> {
    check_heads(d, h)?;
    if let InitMode::SmallQk(sigma) = mode {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "query-key scale {sigma} must be finite and non-negative"
            )));
        }
    }
    let stream = RngStream::new(rng.next_u64());
    let (query, key, value, output) = sample_weights(d, h, mode, &stream);
    Ok(AttentionLayerParams {
        query,
        key,
        value,
        output,
        operator,
    })
}

pub fn build_espa_layer(
    t: usize,
    d: usize,
    h: usize,
    gamma_in: DecayRate,
    gamma_out: DecayRate,
    mode: InitMode,
    rng: &mut RngStream,
) -> Result<AttentionLayerParams> {
    check_heads(d, h)?;
    if gamma_out.is_infinite() {
        return Err(Error::GammaOutOfRange(f64::INFINITY));
    }
    build_layer(
        espa_attention_analytic(t, gamma_in, gamma_out)?,
        d,
        h,
        mode,
        rng,
    )
}

/// Multi-head attention output `Concat_n(A_n·X·W^V_n)·W^O`.
pub fn forward_attention(
    params: &AttentionLayerParams,
    x: &SequenceActivations,
) -> Result<SequenceActivations> {
    check_width(x, params.width())?;
    if params.operator.size() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator is {0}x{0}, sequence has length {1}",
            params.operator.size(),
            x.len()
        )));
    }
    let attention = params.realized_attention(x)?;
    let per_head = attention
        .iter()
        .zip(&params.value)
        .map(|(a, w)| a.matmul(&x.matrix().matmul(w)?))
        .collect::<Result<Vec<_>, _>>()?;
    combine_heads(&per_head, &params.output)
}

/// `X·Xᵀ/d`.
pub fn empirical_kernel(x: &SequenceActivations) -> KernelMatrix {
    let m = x
        .matrix()
        .matmul_transposed(x.matrix())
        .expect("shapes agree");
    KernelMatrix::symmetrize(&m.scale(1.0 / x.width() as f64)).expect("square")
}

/// Embeddings with one `N(0, 1)` row per distinct token id, under the default
/// repeat sampler, and the id-based kernel they estimate.
pub fn sample_embeddings(
    t: usize,
    d: usize,
    r: f64,
    rng: &mut RngStream,
) -> Result<(SequenceActivations, KernelMatrix)> {
    sample_embeddings_with(t, d, r, RepeatSampler::default(), rng)
}

pub fn sample_embeddings_with(
    t: usize,
    d: usize,
    r: f64,
    sampler: RepeatSampler,
    rng: &mut RngStream,
) -> Result<(SequenceActivations, KernelMatrix)> {
    if d == 0 {
        return Err(Error::DimensionMismatch("width must be positive".into()));
    }
    let ids = sample_token_ids(t, r, sampler, rng)?;
    let vocab = ids.iter().max().map_or(0, |m| m + 1);
    let table = Matrix::from_fn(vocab, d, |_, _| rng.standard_normal());
    let x = Matrix::from_fn(t, d, |i, j| table[(ids[i], j)]);
    Ok((SequenceActivations::new(x)?, id_kernel(&ids)))
}

/// `√d` times `T` orthonormal rows, so that `X·Xᵀ/d = I` exactly.
pub fn orthonormal_input(t: usize, d: usize, rng: &mut RngStream) -> Result<SequenceActivations> {
    if t > d {
        return Err(Error::DimensionMismatch(format!(
            "need width {d} >= sequence length {t}"
        )));
    }
    SequenceActivations::new(sample_orthonormal_rows(t, d, rng).scale((d as f64).sqrt()))
}

/// Runs `x0` through one layer per operator (weights drawn layer by layer)
/// and returns the empirical kernel after every layer, input first.
pub fn forward_stack_kernels(
    operators: &[AttentionOperator],
    x0: SequenceActivations,
    h: usize,
    mode: InitMode,
    rng: &mut RngStream,
) -> Result<Vec<KernelMatrix>> {
    let d = x0.width();
    let mut kernels = vec![empirical_kernel(&x0)];
    let mut x = x0;
    for (l, op) in operators.iter().enumerate() {
        let mut layer_rng = rng.fork(l as u64 + 1);
        let layer =
            build_layer(op.clone(), d, h, mode, &mut layer_rng).map_err(|e| e.at_block(l + 1))?;
        x = forward_attention(&layer, &x).map_err(|e| e.at_block(l + 1))?;
        kernels.push(empirical_kernel(&x));
    }
    Ok(kernels)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExactnessReport {
    pub mode: InitMode,
    /// `‖Σ_l − exp_kernel(γ_l)‖_max` for `l = 1..=L`.
    pub per_block: Vec<f64>,
    pub max_deviation: f64,
}

impl ExactnessReport {
    pub fn final_deviation(&self) -> f64 {
        *self.per_block.last().unwrap()
    }
}

/// Skipless E-SPA stack at finite width from an orthonormal-row input,
/// compared against the scheduled exponential kernels.
pub fn exactness_report(
    t: usize,
    d: usize,
    h: usize,
    depth: usize,
    gamma_final: f64,
    mode: InitMode,
    rng: &mut RngStream,
) -> Result<ExactnessReport> {
    check_heads(d, h)?;
    let schedule = espa_schedule(depth, gamma_final)?;
    let operators = (1..=depth)
        .map(|l| espa_attention_analytic(t, schedule.gamma(l - 1), schedule.gamma(l)))
        .collect::<Result<Vec<_>>>()?;
    let x0 = orthonormal_input(t, d, &mut rng.fork(0))?;
    let kernels = forward_stack_kernels(&operators, x0, h, mode, rng)?;
    let per_block = (1..=depth)
        .map(|l| Ok(kernels[l].max_abs_diff(&exp_kernel(t, schedule.gamma(l))?)))
        .collect::<Result<Vec<f64>>>()?;
    let max_deviation = per_block.iter().copied().fold(0.0, f64::max);
    Ok(ExactnessReport {
        mode,
        per_block,
        max_deviation,
    })
}

/// Orthogonal-mode [`exactness_report`], failing with the first block that
/// exceeds [`EXACTNESS_TOLERANCE`].
pub fn validate_exactness(
    t: usize,
    d: usize,
    h: usize,
    depth: usize,
    gamma_final: f64,
    rng: &mut RngStream,
) -> Result<ExactnessReport> {
    let report = exactness_report(t, d, h, depth, gamma_final, InitMode::Orthogonal, rng)?;
    if let Some((l, &deviation)) = report
        .per_block
        .iter()
        .enumerate()
        .find(|(_, &v)| v.is_nan() || v > EXACTNESS_TOLERANCE)
    {
        return Err(Error::ExactnessViolated {
            block: l + 1,
            deviation,
        });
    }
    Ok(report)
}

/// Standard causal softmax attention with a gated identity shortcut inside
/// the attention matrix: `(α·I + β·A(X))·V(X)`.
#[derive(Clone, Debug)]
pub struct ValueSkipInitParams {
    pub alpha: f64,
    pub beta: f64,
    query: Vec<Matrix>,
    key: Vec<Matrix>,
    value: Vec<Matrix>,
    output: Matrix,
}

impl ValueSkipInitParams {
    /// Initialization: `α = 1`, `β = 0`, fan-in Gaussian query/key weights,
    /// value/output weights per `mode`.
    pub fn init(d: usize, h: usize, mode: InitMode, rng: &mut RngStream) -> Result<Self> {
        let dh = check_heads(d, h)?;
        let stream = RngStream::new(rng.next_u64());
        let (_, _, value, output) = sample_weights(d, h, mode, &stream);
        let (mut rq, mut rk) = (stream.fork(5), stream.fork(6));
        Ok(Self {
            alpha: 1.0,
            beta: 0.0,
            query: (0..h)
                .map(|_| sample_gaussian_fan_in(d, dh, &mut rq))
                .collect(),
            key: (0..h)
                .map(|_| sample_gaussian_fan_in(d, dh, &mut rk))
                .collect(),
            value,
            output,
        })
    }

    pub fn heads(&self) -> usize {
        self.value.len()
    }

    pub fn width(&self) -> usize {
        self.output.rows()
    }

    pub fn value_concat(&self) -> Matrix {
        Matrix::hstack(&self.value).expect("value blocks share row count")
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    /// Causal softmax of `(X·W^Q_n)(X·W^K_n)ᵀ/√d_h` for each head.
    pub fn softmax_attention(&self, x: &SequenceActivations) -> Result<Vec<Matrix>> {
        check_width(x, self.width())?;
        let mask = causal_mask(x.len());
        let scale = ((self.width() / self.heads()) as f64).sqrt().recip();
        self.query
            .iter()
            .zip(&self.key)
            .map(|(q, k)| {
                let logits = x
                    .matrix()
                    .matmul(q)?
                    .matmul_transposed(&x.matrix().matmul(k)?)?
                    .scale(scale);
                Ok(masked_row_softmax(&logits, &mask, 1.0)?)
            })
            .collect()
    }
}

pub fn value_skipinit_forward(
    params: &ValueSkipInitParams,
    x: &SequenceActivations,
) -> Result<SequenceActivations> {
    let attention = params.softmax_attention(x)?;
    let per_head = attention
        .iter()
        .zip(&params.value)
        .map(|(a, w)| {
            let v = x.matrix().matmul(w)?;
            v.lincomb(params.alpha, &a.matmul(&v)?, params.beta)
        })
        .collect::<Result<Vec<_>, _>>()?;
    combine_heads(&per_head, &params.output)
}
