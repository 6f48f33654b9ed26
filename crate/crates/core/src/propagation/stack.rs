use serde::{Deserialize, Serialize};

use super::metrics::{metrics_from_parts, CollapseMetrics};
use super::sampler::{sample_input_kernel_with, RepeatSampler};
use super::steps::{alibi_attention_matrices, multihead_attention_step, normalize_step, skip_step};
use crate::error::{Error, Result};
use crate::kernels::{espa_attention_analytic, uniform_kernel, uspa_attention, KernelMatrix};
use crate::linalg::{Matrix, RngStream};
use crate::schedules::{
    corrected_attention, espa_schedule, repeated_token_corrections, skip_adjusted_gamma,
    uspa_schedule, uspa_skip_adjusted_rho, DecaySchedule, DiagonalCorrection, UniformSchedule,
};

const NORMALISED_SKIP_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Espa,
    Uspa,
    ValueSkipinit,
    SoftmaxAlibi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    #[default]
    None,
    Pre,
    Post,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

/// One attention block: `Σ ← α²·Σ + β²·(1/h)·Σ_n A_n·Σ·A_nᵀ` with optional
/// normalization before the attention branch or after the sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub method: Method,
    #[serde(default = "one")]
    pub heads: usize,
    #[serde(default)]
    pub shortcut_weight: f64,
    #[serde(default = "unit")]
    pub residual_weight: f64,
    #[serde(default)]
    pub norm_placement: NormPlacement,
}

impl BlockSpec {
    pub fn skipless(method: Method, heads: usize) -> Self {
        Self {
            method,
            heads,
            shortcut_weight: 0.0,
            residual_weight: 1.0,
            norm_placement: NormPlacement::None,
        }
    }

    /// Normalised skip: `β = √(1 − α²)`.
    pub fn normalised(method: Method, heads: usize, alpha: f64, norm: NormPlacement) -> Self {
        Self {
            method,
            heads,
            shortcut_weight: alpha,
            residual_weight: (1.0 - alpha * alpha).sqrt(),
            norm_placement: norm,
        }
    }

    pub fn with_weights(mut self, alpha: f64, beta: f64) -> Self {
        self.shortcut_weight = alpha;
        self.residual_weight = beta;
        self
    }

    pub fn with_norm(mut self, norm: NormPlacement) -> Self {
        self.norm_placement = norm;
        self
    }

    fn is_spa(&self) -> bool {
        matches!(self.method, Method::Espa | Method::Uspa)
    }

    pub fn has_skip(&self) -> bool {
        self.shortcut_weight != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let (alpha, beta) = (self.shortcut_weight, self.residual_weight);
        if self.heads == 0 {
            return Err(Error::InvalidConfig("heads must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!(
                "shortcut_weight {alpha} outside [0, 1]"
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "residual_weight {beta} must be finite and non-negative"
            )));
        }
        // The SPA constructions assume the block preserves unit diagonals.
        if self.is_spa() && (alpha * alpha + beta * beta - 1.0).abs() > NORMALISED_SKIP_TOLERANCE {
            return Err(Error::InvalidConfig(format!(
                "{:?} blocks need normalised skips (alpha^2 + beta^2 = 1), got alpha={alpha}, beta={beta}",
                self.method
            )));
        }
        Ok(())
    }
}

/// Replaces the block spec for blocks `first..=last` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockOverride {
    pub first: usize,
    pub last: usize,
    pub block: BlockSpec,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKernel {
    /// `Σ_0 = I`.
    #[default]
    Identity,
    /// Sequence average `(1−r)·I + r·11ᵀ`.
    Averaged,
    /// One id-based kernel drawn with the configured sampler and seed.
    Sampled,
}

fn default_seq_len() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackConfig {
    pub depth: usize,
    #[serde(default = "default_seq_len")]
    pub seq_len: usize,
    pub block: BlockSpec,
    #[serde(default)]
    pub overrides: Vec<BlockOverride>,
    /// Terminal decay rate for E-SPA blocks.
    #[serde(default)]
    pub gamma_final: Option<f64>,
    /// Terminal off-diagonal for U-SPA blocks.
    #[serde(default)]
    pub rho_final: Option<f64>,
    #[serde(default)]
    pub repeated_fraction: f64,
    #[serde(default)]
    pub input: InputKernel,
    #[serde(default)]
    pub sampler: RepeatSampler,
    /// Repeated-token corrections; defaults to on for skipless SPA stacks when
    /// `repeated_fraction > 0`.
    #[serde(default)]
    pub corrections: Option<bool>,
    /// Follow each attention block with an MLP block, modelled as the identity
    /// map on kernels but with the same skip and normalization.
    #[serde(default)]
    pub mlp_blocks: bool,
    #[serde(default)]
    pub seed: u64,
}

impl StackConfig {
    pub fn new(depth: usize, seq_len: usize, block: BlockSpec) -> Self {
        Self {
            depth,
            seq_len,
            block,
            overrides: Vec::new(),
            gamma_final: None,
            rho_final: None,
            repeated_fraction: 0.0,
            input: InputKernel::Identity,
            sampler: RepeatSampler::default(),
            corrections: None,
            mlp_blocks: false,
            seed: 0,
        }
    }

    /// Spec for block `l` (1-based); the last matching override wins.
    pub fn block_spec(&self, l: usize) -> BlockSpec {
        self.overrides
            .iter()
            .rev()
            .find(|o| (o.first..=o.last).contains(&l))
            .map_or(self.block, |o| o.block)
    }

    fn specs(&self) -> impl Iterator<Item = BlockSpec> + '_ {
        (1..=self.depth).map(|l| self.block_spec(l))
    }

    fn any_spa_skip(&self) -> bool {
        self.specs().any(|s| s.is_spa() && s.has_skip())
    }

    pub fn corrections_enabled(&self) -> bool {
        self.corrections
            .unwrap_or(self.repeated_fraction > 0.0 && !self.any_spa_skip())
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("depth must be at least 1".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig("seq_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.repeated_fraction) {
            return Err(Error::RhoOutOfRange(self.repeated_fraction));
        }
        for o in &self.overrides {
            if o.first == 0 || o.first > o.last || o.last > self.depth {
                return Err(Error::InvalidConfig(format!(
                    "override range {}..={} outside 1..={}",
                    o.first, o.last, self.depth
                )));
            }
        }
        for (l, spec) in self.specs().enumerate() {
            spec.validate().map_err(|e| e.at_block(l + 1))?;
        }
        if self.specs().any(|s| s.method == Method::Espa) && self.gamma_final.is_none() {
            return Err(Error::InvalidConfig("espa blocks need gamma_final".into()));
        }
        if self.specs().any(|s| s.method == Method::Uspa) && self.rho_final.is_none() {
            return Err(Error::InvalidConfig("uspa blocks need rho_final".into()));
        }
        if self.corrections == Some(true) && self.any_spa_skip() {
            return Err(Error::InvalidConfig(
                "repeated-token corrections are only defined for skipless SPA blocks".into(),
            ));
        }
        Ok(())
    }

    pub fn input_kernel(&self) -> Result<KernelMatrix> {
        let (t, r) = (self.seq_len, self.repeated_fraction);
        match self.input {
            InputKernel::Identity => Ok(KernelMatrix::identity(t)),
            InputKernel::Averaged => uniform_kernel(t, r),
            InputKernel::Sampled => {
                let mut rng = RngStream::new(self.seed);
                sample_input_kernel_with(t, r, self.sampler, &mut rng)
            }
        }
    }

    fn decay_schedule(&self) -> Result<Option<DecaySchedule>> {
        self.gamma_final
            .filter(|_| self.specs().any(|s| s.method == Method::Espa))
            .map(|g| espa_schedule(self.depth, g))
            .transpose()
    }

    fn uniform_schedule(&self) -> Result<Option<UniformSchedule>> {
        let r = if self.corrections_enabled() {
            self.repeated_fraction
        } else {
            0.0
        };
        self.rho_final
            .filter(|_| self.specs().any(|s| s.method == Method::Uspa))
            .map(|rho| uspa_schedule(self.depth, rho, r))
            .transpose()
    }
}

/// Kernel after every block, `Σ_0` first.
#[derive(Clone, Debug)]
pub struct PropagationTrace {
    pub kernels: Vec<KernelMatrix>,
    pub normalized: Vec<KernelMatrix>,
    pub metrics: Vec<CollapseMetrics>,
    pub decay_schedule: Option<DecaySchedule>,
    pub uniform_schedule: Option<UniformSchedule>,
}

impl PropagationTrace {
    pub fn depth(&self) -> usize {
        self.kernels.len() - 1
    }

    pub fn last(&self) -> &KernelMatrix {
        self.kernels.last().unwrap()
    }
}

struct Operators<'a> {
    config: &'a StackConfig,
    decay: Option<DecaySchedule>,
    uniform: Option<UniformSchedule>,
    correction: Option<DiagonalCorrection>,
    alibi: Option<(usize, Vec<Matrix>)>,
}

impl Operators<'_> {
    fn heads(&mut self, l: usize, spec: &BlockSpec) -> Result<Vec<Matrix>> {
        let t = self.config.seq_len;
        let alpha = spec.shortcut_weight;
        let a = match spec.method {
            Method::ValueSkipinit => Matrix::identity(t),
            Method::SoftmaxAlibi => {
                if self.alibi.as_ref().map(|(h, _)| *h) != Some(spec.heads) {
                    self.alibi = Some((spec.heads, alibi_attention_matrices(t, spec.heads)?));
                }
                return Ok(self.alibi.as_ref().unwrap().1.clone());
            }
            Method::Espa => {
                let s = self.decay.as_ref().expect("validated");
                if let Some(c) = &self.correction {
                    corrected_attention(l, s, c, t)?.into_matrix()
                } else {
                    let out = skip_adjusted_gamma(s.gamma(l - 1), s.gamma(l), alpha)?;
                    espa_attention_analytic(t, s.gamma(l - 1), out)?.into_matrix()
                }
            }
            Method::Uspa => {
                let s = self.uniform.as_ref().expect("validated");
                let (prev, target) = (s.rho(l - 1), s.rho(l));
                let out = if spec.has_skip() {
                    uspa_skip_adjusted_rho(prev, target, alpha, spec.residual_weight)?
                } else {
                    target
                };
                uspa_attention(t, prev, out)?.into_matrix()
            }
        };
        // SPA heads are identical at initialization, so one suffices.
        Ok(vec![a])
    }
}

fn apply_block(
    sigma: &KernelMatrix,
    spec: &BlockSpec,
    heads: Option<&[Matrix]>,
) -> Result<KernelMatrix> {
    let branch = |input: &KernelMatrix| match heads {
        Some(h) => multihead_attention_step(input, h),
        None => Ok(input.clone()),
    };
    let (alpha, beta) = (spec.shortcut_weight, spec.residual_weight);
    match spec.norm_placement {
        NormPlacement::None => skip_step(sigma, alpha, beta, &branch(sigma)?),
        NormPlacement::Pre => skip_step(sigma, alpha, beta, &branch(&normalize_step(sigma)?)?),
        NormPlacement::Post => normalize_step(&skip_step(sigma, alpha, beta, &branch(sigma)?)?),
    }
}

/// Evolves the input kernel through the configured stack.
pub fn run_stack(config: &StackConfig) -> Result<PropagationTrace> {
    config.validate()?;
    let decay = config.decay_schedule()?;
    let uniform = config.uniform_schedule()?;
    let correction = match &decay {
        Some(s) if config.corrections_enabled() && config.repeated_fraction > 0.0 => Some(
            repeated_token_corrections(s, config.seq_len, config.repeated_fraction)?,
        ),
        _ => None,
    };
    let mut ops = Operators {
        config,
        decay,
        uniform,
        correction,
        alibi: None,
    };

    let sigma0 = config.input_kernel()?;
    let mut normalized = vec![normalize_step(&sigma0).map_err(|e| e.at_block(0))?];
    let mut metrics = vec![metrics_from_parts(&sigma0, &normalized[0])];
    let mut kernels = vec![sigma0];
    for l in 1..=config.depth {
        let spec = config.block_spec(l);
        let step = |ops: &mut Operators, sigma: &KernelMatrix| -> Result<KernelMatrix> {
            let heads = ops.heads(l, &spec)?;
            let mut next = apply_block(sigma, &spec, Some(&heads))?;
            if config.mlp_blocks {
                next = apply_block(&next, &spec, None)?;
            }
            Ok(next)
        };
        let next = step(&mut ops, kernels.last().unwrap()).map_err(|e| e.at_block(l))?;
        let cos = normalize_step(&next).map_err(|e| e.at_block(l))?;
        metrics.push(metrics_from_parts(&next, &cos));
        normalized.push(cos);
        kernels.push(next);
    }
    Ok(PropagationTrace {
        kernels,
        normalized,
        metrics,
        decay_schedule: ops.decay,
        uniform_schedule: ops.uniform,
    })
}
