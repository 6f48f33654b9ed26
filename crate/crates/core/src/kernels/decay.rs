use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Exponential decay rate `γ > 0`, with `∞` as a distinct variant.
///
/// `exp(−γ·k)` is evaluated through [`DecayRate::decay`], which defines the
/// infinite rate as the Kronecker delta in `k` so `∞·0` never arises.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecayRate {
    Finite(f64),
    Infinite,
}

impl DecayRate {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma == f64::INFINITY {
            Ok(Self::Infinite)
        } else if gamma.is_finite() && gamma > 0.0 {
            Ok(Self::Finite(gamma))
        } else {
            Err(Error::GammaOutOfRange(gamma))
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Self::Infinite)
    }

    /// Raw value, `f64::INFINITY` for the infinite rate.
    pub fn value(self) -> f64 {
        match self {
            Self::Finite(g) => g,
            Self::Infinite => f64::INFINITY,
        }
    }

    /// `exp(−γ·lag)`.
    pub fn decay(self, lag: usize) -> f64 {
        match self {
            Self::Finite(g) => (-g * lag as f64).exp(),
            Self::Infinite if lag == 0 => 1.0,
            Self::Infinite => 0.0,
        }
    }

    /// `a(γ) = √(1 − e^{−2γ})`, with `a(∞) = 1`.
    pub fn a(self) -> f64 {
        match self {
            Self::Finite(g) => (-(-2.0 * g).exp_m1()).sqrt(),
            Self::Infinite => 1.0,
        }
    }

    /// Inverse of [`DecayRate::a`]: `γ(a) = −½ ln(1 − a²)` for `a ∈ (0, 1]`.
    pub fn from_a(a: f64) -> Result<Self> {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::GammaOutOfRange(-0.5 * (1.0 - a * a).ln()));
        }
        if a == 1.0 {
            return Ok(Self::Infinite);
        }
        Self::new(-0.5 * (-a * a).ln_1p())
    }

    /// `γ ≥ other` in the extended order where `∞` is the largest rate.
    pub fn at_least(self, other: DecayRate) -> bool {
        match (self, other) {
            (Self::Infinite, _) => true,
            (Self::Finite(_), Self::Infinite) => false,
            (Self::Finite(a), Self::Finite(b)) => a >= b,
        }
    }
}

/// Free-function form of [`DecayRate::a`].
pub fn decay_helper_a(gamma: DecayRate) -> f64 {
    gamma.a()
}

impl fmt::Display for DecayRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(g) => write!(f, "{g:?}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for DecayRate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Self::Infinite);
        }
        let g: f64 = s
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("cannot parse decay rate `{s}`")))?;
        Self::new(g)
    }
}

impl Serialize for DecayRate {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Finite(g) => serializer.serialize_f64(*g),
            Self::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for DecayRate {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(deserializer)? {
            Raw::Num(g) => DecayRate::new(g),
            Raw::Text(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}
