//! Laplace and bounded-Laplace (BLP) perturbation of shared Q-values.
//!
//! The bounded mechanism keeps every perturbed value inside `[l, u]`: it
//! redraws `q + η`, `η ~ Laplace(0, b)`, until the result lands in range,
//! which yields exactly the Laplace density restricted to `[l, u]` and
//! renormalized by `C_q = ∫ₗᵘ (1/2b)·exp(−|x−q|/b) dx`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::open_unit;
use crate::error::{Error, Result};

/// Draws allowed before [`BoundedLaplace::perturb`] gives up.
pub const MAX_REJECTIONS: u64 = 1_000_000;

/// Privacy configuration. The noise scale is derived as
/// `b = alpha·|u − l| / ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacyParams {
    pub enabled: bool,
    pub epsilon: f64,
    pub lower: f64,
    pub upper: f64,
    /// Coefficient in the scale formula. `None` means "use the learning rate".
    pub alpha: Option<f64>,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        PrivacyParams {
            enabled: true,
            epsilon: 1.0,
            lower: -1.5,
            upper: 10.0,
            alpha: None,
        }
    }
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("privacy.epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::Config(format!(
                "privacy bounds need lower < upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("privacy.alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// Δ = |u − l|.
    pub fn sensitivity(&self) -> f64 {
        (self.upper - self.lower).abs()
    }

    /// b = α·Δ/ε, with α falling back to `learning_rate` when not overridden.
    pub fn scale(&self, learning_rate: f64) -> f64 {
        self.alpha.unwrap_or(learning_rate) * self.sensitivity() / self.epsilon
    }

    pub fn mechanism(&self, learning_rate: f64) -> Result<BoundedLaplace> {
        self.validate()?;
        BoundedLaplace::new(self.lower, self.upper, self.scale(learning_rate))
    }
}

/// Inverse-CDF Laplace draw from a uniform `v ∈ (−½, ½)`:
/// `mean − b·sgn(v)·ln(1 − 2|v|)`.
pub fn laplace_from_uniform(mean: f64, scale: f64, v: f64) -> f64 {
    if v == 0.0 {
        return mean;
    }
    mean - scale * v.signum() * (-2.0 * v.abs()).ln_1p()
}

pub fn laplace_sample<R: Rng + ?Sized>(mean: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Parameter(format!("Laplace scale must be positive, got {scale}")));
    }
    Ok(laplace_from_uniform(mean, scale, open_unit(rng) - 0.5))
}

/// The bounded Laplace mechanism on `[lower, upper]` with scale `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedLaplace {
    lower: f64,
    upper: f64,
    scale: f64,
}

impl BoundedLaplace {
    pub fn new(lower: f64, upper: f64, scale: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Parameter(format!("need finite lower < upper, got [{lower}, {upper}]")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
        }
        Ok(BoundedLaplace { lower, upper, scale })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lower..=self.upper).contains(&x)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }

    /// Perturb one value already inside `[lower, upper]`.
    pub fn perturb<R: Rng + ?Sized>(&self, q: f64, rng: &mut R) -> Result<f64> {
        if !self.contains(q) {
            return Err(Error::Precondition(format!(
                "value {q} outside [{}, {}]",
                self.lower, self.upper
            )));
        }
        for _ in 0..MAX_REJECTIONS {
            let x = laplace_from_uniform(q, self.scale, open_unit(rng) - 0.5);
            if self.contains(x) {
                return Ok(x);
            }
        }
        Err(Error::RejectionLimit {
            attempts: MAX_REJECTIONS,
            q,
            lower: self.lower,
            upper: self.upper,
            scale: self.scale,
        })
    }

    /// Clamp each entry into range, then perturb each independently.
    pub fn perturb_vector<R: Rng + ?Sized>(&self, values: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        values.iter().map(|&q| self.perturb(self.clamp(q), rng)).collect()
    }
}

pub fn blp_perturb<R: Rng + ?Sized>(q: f64, mechanism: &BoundedLaplace, rng: &mut R) -> Result<f64> {
    mechanism.perturb(q, rng)
}

pub fn perturb_qvector<R: Rng + ?Sized>(
    values: &[f64],
    mechanism: &BoundedLaplace,
    rng: &mut R,
) -> Result<Vec<f64>> {
    mechanism.perturb_vector(values, rng)
}
