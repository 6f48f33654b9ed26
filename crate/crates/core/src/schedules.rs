//! Depth schedules for the decay rates `(γ_l)` and uniform off-diagonals
//! `(ρ_l)`, repeated-token diagonal corrections, and shortcut adjustments.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{
    decompose_dpb, espa_matrix_analytic, exp_cholesky_analytic, AttentionOperator, DecayRate,
    DEFAULT_NEG_BIAS,
};
use crate::linalg::Matrix;

/// Decay rates `γ_0 = ∞ ≥ γ_1 ≥ … ≥ γ_L > 0` with their helpers `a(γ_l)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecaySchedule {
    gammas: Vec<DecayRate>,
    a_values: Vec<f64>,
}

impl DecaySchedule {
    /// Validates an explicit list of rates (index 0 must be infinite).
    pub fn from_gammas(gammas: Vec<DecayRate>) -> Result<Self> {
        if gammas.len() < 2 {
            return Err(Error::InvalidConfig(
                "a decay schedule needs at least one block".into(),
            ));
        }
        if !gammas[0].is_infinite() {
            return Err(Error::InvalidConfig(
                "the input decay rate must be inf".into(),
            ));
        }
        for (l, pair) in gammas.windows(2).enumerate() {
            if !pair[0].at_least(pair[1]) {
                return Err(Error::OrderViolation(format!(
                    "gamma_{} = {} is larger than gamma_{} = {}",
                    l + 1,
                    pair[1],
                    l,
                    pair[0]
                )));
            }
        }
        let last = *gammas.last().unwrap();
        if last.is_infinite() {
            return Err(Error::GammaOutOfRange(f64::INFINITY));
        }
        let a_values = gammas.iter().map(|g| g.a()).collect();
        Ok(Self { gammas, a_values })
    }

    /// Number of blocks `L`.
    pub fn depth(&self) -> usize {
        self.gammas.len() - 1
    }

    pub fn gammas(&self) -> &[DecayRate] {
        &self.gammas
    }

    pub fn gamma(&self, l: usize) -> DecayRate {
        self.gammas[l]
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a_values
    }

    pub fn terminal(&self) -> DecayRate {
        *self.gammas.last().unwrap()
    }

    /// Diagonal `a(γ_l)/a(γ_{l-1})` of block `l`'s attention matrix, `l ≥ 1`.
    pub fn diagonal_ratio(&self, l: usize) -> f64 {
        self.a_values[l] / self.a_values[l - 1]
    }
}

/// Rates with `a(γ_l) = a(γ_L)^{l/L}`, which keeps the attention diagonal
/// constant across blocks.
pub fn espa_schedule(depth: usize, gamma_final: f64) -> Result<DecaySchedule> {
    if depth == 0 {
        return Err(Error::InvalidConfig("depth must be at least 1".into()));
    }
    if !(gamma_final.is_finite() && gamma_final > 0.0) {
        return Err(Error::GammaOutOfRange(gamma_final));
    }
    let ln_a_final = 0.5 * (-(-2.0 * gamma_final).exp_m1()).ln();
    let mut gammas = Vec::with_capacity(depth + 1);
    gammas.push(DecayRate::Infinite);
    for l in 1..depth {
        // 1 − a_l² = −expm1(2(l/L)·ln a_L)
        let one_minus_a2 = -(2.0 * (l as f64 / depth as f64) * ln_a_final).exp_m1();
        gammas.push(DecayRate::new(-0.5 * one_minus_a2.ln())?);
    }
    gammas.push(DecayRate::new(gamma_final)?);
    DecaySchedule::from_gammas(gammas)
}

/// Uniform off-diagonals `ρ_0 = r ≤ … ≤ ρ_L < 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformSchedule {
    rhos: Vec<f64>,
    repeated_fraction: f64,
}

impl UniformSchedule {
    pub fn depth(&self) -> usize {
        self.rhos.len() - 1
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn rho(&self, l: usize) -> f64 {
        self.rhos[l]
    }

    pub fn repeated_fraction(&self) -> f64 {
        self.repeated_fraction
    }
}

/// Linear ramp `ρ_l = r + (ρ_L − r)·l/L`.
pub fn uspa_schedule(depth: usize, rho_final: f64, r: f64) -> Result<UniformSchedule> {
    if depth == 0 {
        return Err(Error::InvalidConfig("depth must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&rho_final) {
        return Err(Error::RhoOutOfRange(rho_final));
    }
    if !(0.0..=rho_final).contains(&r) {
        return Err(Error::RhoOutOfRange(r));
    }
    let mut rhos: Vec<f64> = (0..depth)
        .map(|l| r + (rho_final - r) * l as f64 / depth as f64)
        .collect();
    rhos.push(rho_final);
    Ok(UniformSchedule {
        rhos,
        repeated_fraction: r,
    })
}

/// Expected diagonals `D̄_l = diag(L_l·Σ̄_0·L_lᵀ)` under the sequence-averaged
/// input kernel `Σ̄_0 = (1−r)·I + r·11ᵀ`, one vector per block (`D̄_0 = 1`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalCorrection {
    diagonals: Vec<Vec<f64>>,
}

impl DiagonalCorrection {
    pub fn block(&self, l: usize) -> &[f64] {
        &self.diagonals[l]
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.diagonals
    }

    /// `D̄_l^{-1/2}` as a vector.
    pub fn inv_sqrt(&self, l: usize) -> Vec<f64> {
        self.diagonals[l].iter().map(|d| d.sqrt().recip()).collect()
    }

    pub fn sqrt(&self, l: usize) -> Vec<f64> {
        self.diagonals[l].iter().map(|d| d.sqrt()).collect()
    }
}

/// `Σ̄_0 = (1−r)·I + r·11ᵀ`.
pub fn averaged_input_kernel(t: usize, r: f64) -> Matrix {
    Matrix::from_fn(t, t, |i, j| if i == j { 1.0 } else { r })
}

pub fn repeated_token_corrections(
    schedule: &DecaySchedule,
    t: usize,
    r: f64,
) -> Result<DiagonalCorrection> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::RhoOutOfRange(r));
    }
    let mut diagonals = Vec::with_capacity(schedule.depth() + 1);
    diagonals.push(vec![1.0; t]);
    for &gamma in &schedule.gammas()[1..] {
        let l = exp_cholesky_analytic(t, gamma)?;
        let d = l
            .matrix()
            .row_iter()
            .map(|row| {
                let sq: f64 = row.iter().map(|x| x * x).sum();
                let sum: f64 = row.iter().sum();
                (1.0 - r) * sq + r * sum * sum
            })
            .collect();
        diagonals.push(d);
    }
    Ok(DiagonalCorrection { diagonals })
}

/// Block `l` E-SPA attention with the repeated-token correction
/// `D̄_l^{-1/2}·L_l·L_{l-1}⁻¹·D̄_{l-1}^{1/2}`.
pub fn corrected_attention(
    l: usize,
    schedule: &DecaySchedule,
    corr: &DiagonalCorrection,
    t: usize,
) -> Result<AttentionOperator> {
    if l == 0 || l > schedule.depth() {
        return Err(Error::InvalidConfig(format!(
            "block index {l} outside 1..={}",
            schedule.depth()
        )));
    }
    if corr.blocks().len() != schedule.depth() + 1 || corr.block(l).len() != t {
        return Err(Error::DimensionMismatch(
            "correction does not match schedule depth or sequence length".into(),
        ));
    }
    let a = espa_matrix_analytic(t, schedule.gamma(l - 1), schedule.gamma(l))?;
    let scaled = a.scale_rows_cols(&corr.inv_sqrt(l), &corr.sqrt(l - 1));
    decompose_dpb(&scaled, DEFAULT_NEG_BIAS)
}

/// Outgoing decay rate for a normalised-skip block with shortcut weight `alpha`,
/// chosen so the attention diagonal `λ_α` satisfies
/// `α² + (1−α²)·λ_α² = λ_0²` with `λ_0 = a(γ_target)/a(γ_prev)`.
pub fn skip_adjusted_gamma(
    gamma_prev: DecayRate,
    gamma_target: DecayRate,
    alpha: f64,
) -> Result<DecayRate> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "shortcut weight {alpha} outside [0, 1)"
        )));
    }
    if !gamma_prev.at_least(gamma_target) {
        return Err(Error::OrderViolation(format!(
            "target rate {gamma_target} exceeds incoming rate {gamma_prev}"
        )));
    }
    if alpha == 0.0 {
        return Ok(gamma_target);
    }
    let a_prev = gamma_prev.a();
    let lambda0 = gamma_target.a() / a_prev;
    let lambda_sq = (lambda0 * lambda0 - alpha * alpha) / (1.0 - alpha * alpha);
    if lambda0 < alpha || lambda_sq <= 0.0 {
        return Err(Error::ShortcutTooLarge { lambda0, alpha });
    }
    let gamma = -0.5 * (-lambda_sq * a_prev * a_prev).ln_1p();
    DecayRate::new(gamma).map_err(|_| Error::ShortcutTooLarge { lambda0, alpha })
}

/// Residual-branch off-diagonal `(ρ_l − α²ρ_{l-1})/β²` for U-SPA with
/// normalised skips; must lie in `[ρ_{l-1}, 1)`.
pub fn uspa_skip_adjusted_rho(
    rho_prev: f64,
    rho_target: f64,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if beta == 0.0 {
        return Err(Error::InvalidConfig(
            "residual weight must be non-zero".into(),
        ));
    }
    let rho = (rho_target - alpha * alpha * rho_prev) / (beta * beta);
    if rho < rho_prev {
        return Err(Error::OrderViolation(format!(
            "adjusted rho {rho} falls below incoming rho {rho_prev}"
        )));
    }
    if rho >= 1.0 {
        return Err(Error::RhoOutOfRange(rho));
    }
    Ok(rho)
}
