//! The privacy-exploiting poisoning attacker.
//!
//! For a poisoning degree γ the attacker solves for the Lagrange multiplier
//! `c > b` of
//!
//! ```text
//! 2b²/(c²−b²) + ln(1 − b²/c²) = γ
//! ```
//!
//! and derives the attack mean `μ* = (b²(θ−2c) − θc²)/(b² − c²)`. Noise is
//! then drawn either from `Laplace(μ*, b)` or from the tilted density
//! `f*(x) = (c²−b²)/(2bc²) · exp(−|x−θ|/b + (x−θ)/c)`, whose mean is μ*.
//!
//! [`pelpa_advice`] runs the adaptive loop: raise γ until the poisoned
//! vector undercuts the advisee's best action, or γ passes the cap.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::argmax;
use crate::dist::{open_unit, AsymmetricLaplace};
use crate::error::{Error, Result};
use crate::privacy::BoundedLaplace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSampler {
    /// `Laplace(μ*, b)`.
    ShiftedLaplace,
    /// The exact tilted density `f*`.
    Tilted,
}

impl NoiseSampler {
    pub fn name(self) -> &'static str {
        match self {
            NoiseSampler::ShiftedLaplace => "shifted-laplace",
            NoiseSampler::Tilted => "tilted",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    /// Compromised advisors replace their LDP output.
    Internal,
    /// The channel is compromised: noise is added on top of benign output.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackParams {
    /// Poisoning-degree cap τ_γ.
    pub tau_gamma: u32,
    pub mode: AttackMode,
    pub sampler: NoiseSampler,
    /// Benign mean θ.
    pub theta: f64,
    /// Judge acceptance against the attacker's own table instead of the
    /// advisee's.
    pub blind: bool,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams {
            tau_gamma: 12,
            mode: AttackMode::Internal,
            sampler: NoiseSampler::ShiftedLaplace,
            theta: 0.0,
            blind: false,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau_gamma == 0 {
            return Err(Error::Config("attack.tau_gamma must be at least 1".into()));
        }
        if !self.theta.is_finite() {
            return Err(Error::Config("attack.theta must be finite".into()));
        }
        Ok(())
    }
}

/// `g(t) = 2t/(1−t) + ln(1−t)` with `t = b²/c²`, the left-hand side of the
/// multiplier equation. `g(0) = 0`, `g → ∞` as `t → 1`, and
/// `g'(t) = (1+t)/(1−t)² > 0`, so every γ > 0 has exactly one root in (0, 1).
fn g_of_t(t: f64) -> f64 {
    2.0 * t / (1.0 - t) + (-t).ln_1p()
}

/// Same function written in `u = 1 − t`; keeps full precision near t = 1.
fn g_of_u(u: f64) -> f64 {
    2.0 * (1.0 - u) / u + u.ln()
}

/// Root `t* = b²/c²` of `g(t) = γ`.
fn solve_ratio(gamma: f64) -> f64 {
    const SPLIT: f64 = 0.5;
    let mut best = (f64::INFINITY, 0.0);
    if gamma <= g_of_t(SPLIT) {
        // bisect on t in (0, 0.5]
        let (mut lo, mut hi) = (0.0, SPLIT);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let r = g_of_t(mid) - gamma;
            if r.abs() < best.0 {
                best = (r.abs(), mid);
            }
            if r < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best.1
    } else {
        // bisect on u = 1 − t in (0, 0.5]; g decreases in u
        let (mut lo, mut hi) = (0.0, SPLIT);
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let r = g_of_u(mid) - gamma;
            if r.abs() < best.0 {
                best = (r.abs(), mid);
            }
            if r > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        1.0 - best.1
    }
}

/// The multiplier `c > b` solving `2b²/(c²−b²) + ln(1 − b²/c²) = γ`.
pub fn solve_c(gamma: f64, b: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("poisoning degree must be positive, got {gamma}")));
    }
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Parameter(format!("scale must be positive, got {b}")));
    }
    Ok(b / solve_ratio(gamma).sqrt())
}

/// `μ* = (b²(θ−2c) − θc²)/(b² − c²)`.
pub fn attack_mean(theta: f64, c: f64, b: f64) -> Result<f64> {
    if !(b > 0.0 && c > b) {
        return Err(Error::Parameter(format!("attack mean needs c > b > 0, got c={c}, b={b}")));
    }
    Ok((b * b * (theta - 2.0 * c) - theta * c * c) / (b * b - c * c))
}

/// Everything that defines one attack noise source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialProfile {
    pub gamma: f64,
    pub c: f64,
    pub mu_star: f64,
    pub b: f64,
    pub theta: f64,
}

impl AdversarialProfile {
    pub fn new(gamma: f64, b: f64, theta: f64) -> Result<Self> {
        let c = solve_c(gamma, b)?;
        let mu_star = attack_mean(theta, c, b)?;
        Ok(AdversarialProfile {
            gamma,
            c,
            mu_star,
            b,
            theta,
        })
    }

    /// Normalizing constant `(c² − b²)/(2bc²)` of the tilted density.
    pub fn normalizer(&self) -> f64 {
        (self.c * self.c - self.b * self.b) / (2.0 * self.b * self.c * self.c)
    }

    /// `f*(x)`.
    pub fn tilted_pdf(&self, x: f64) -> f64 {
        let d = x - self.theta;
        self.normalizer() * (-d.abs() / self.b + d / self.c).exp()
    }

    pub fn noise(&self, sampler: NoiseSampler) -> AsymmetricLaplace {
        match sampler {
            NoiseSampler::ShiftedLaplace => AsymmetricLaplace::laplace(self.mu_star, self.b),
            NoiseSampler::Tilted => AsymmetricLaplace {
                loc: self.theta,
                left_rate: 1.0 / self.b + 1.0 / self.c,
                right_rate: 1.0 / self.b - 1.0 / self.c,
            },
        }
    }
}

pub fn sample_adversarial<R: Rng + ?Sized>(
    profile: &AdversarialProfile,
    sampler: NoiseSampler,
    rng: &mut R,
) -> f64 {
    profile.noise(sampler).sample(rng)
}

/// Profiles for γ = 1, 2, …, τ_γ + 1, solved once per run.
#[derive(Debug, Clone)]
pub struct ProfileLadder {
    profiles: Vec<AdversarialProfile>,
}

impl ProfileLadder {
    pub fn new(tau_gamma: u32, b: f64, theta: f64) -> Result<Self> {
        let profiles = (1..=tau_gamma + 1)
            .map(|g| AdversarialProfile::new(f64::from(g), b, theta))
            .collect::<Result<_>>()?;
        Ok(ProfileLadder { profiles })
    }

    pub fn tau_gamma(&self) -> u32 {
        self.profiles.len() as u32 - 1
    }

    /// Profile for integer γ ≥ 1.
    pub fn get(&self, gamma: u32) -> &AdversarialProfile {
        &self.profiles[gamma as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptedBy {
    QCondition,
    TauGammaCap,
}

impl AcceptedBy {
    pub fn name(self) -> &'static str {
        match self {
            AcceptedBy::QCondition => "q-condition",
            AcceptedBy::TauGammaCap => "tau-gamma-cap",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PelpaOutcome {
    pub values: Vec<f64>,
    pub gamma: u32,
    pub mu_star: f64,
    pub c: f64,
    pub accepted_by: AcceptedBy,
    /// The advisee's vector was unavailable and the attacker judged
    /// acceptance against its own row.
    pub blind: bool,
}

/// Raise γ from 1 until `candidate(profile)` undercuts `reference` at the
/// reference's best action, or γ exceeds the ladder's cap (the last
/// candidate is then accepted as is).
fn adaptive_loop<F>(reference: &[f64], ladder: &ProfileLadder, mut candidate: F) -> Result<PelpaOutcome>
where
    F: FnMut(&AdversarialProfile) -> Result<Vec<f64>>,
{
    let best = argmax(reference);
    let cap = ladder.tau_gamma();
    let mut gamma = 0;
    loop {
        gamma += 1;
        let profile = ladder.get(gamma);
        let values = candidate(profile)?;
        // past the cap the vector is taken whatever it looks like
        let accepted_by = if gamma > cap {
            Some(AcceptedBy::TauGammaCap)
        } else if values[best] < reference[best] {
            Some(AcceptedBy::QCondition)
        } else {
            None
        };
        if let Some(accepted_by) = accepted_by {
            return Ok(PelpaOutcome {
                values,
                gamma,
                mu_star: profile.mu_star,
                c: profile.c,
                accepted_by,
                blind: false,
            });
        }
    }
}

/// Draw one noise value `η` such that `base + η` lies strictly inside
/// `(lower, upper)`. Equivalent to redrawing `η` until it does, but exact
/// and bounded in time even when μ* sits far outside the interval.
fn bounded_noise<R: Rng + ?Sized>(noise: &AsymmetricLaplace, base: f64, mech: &BoundedLaplace, rng: &mut R) -> f64 {
    let (lo, hi) = (mech.lower() - base, mech.upper() - base);
    loop {
        let v = base + noise.truncated_quantile(open_unit(rng), lo, hi);
        if v > mech.lower() && v < mech.upper() {
            return v;
        }
    }
}

/// Poisoned advice for an internal (compromised-advisor) attack.
///
/// `attacker_row` is the attacker's own Q-row for the requested state;
/// `advisee_row` is the advisee's row when the attacker can see it.
pub fn pelpa_advice<R: Rng + ?Sized>(
    attacker_row: &[f64],
    advisee_row: Option<&[f64]>,
    ladder: &ProfileLadder,
    sampler: NoiseSampler,
    mech: &BoundedLaplace,
    rng: &mut R,
) -> Result<PelpaOutcome> {
    let base: Vec<f64> = attacker_row.iter().map(|&q| mech.clamp(q)).collect();
    let reference = advisee_row.unwrap_or(attacker_row);
    if reference.len() != base.len() {
        return Err(Error::Protocol("advisee and attacker rows differ in length".into()));
    }
    let mut out = adaptive_loop(reference, ladder, |profile| {
        let noise = profile.noise(sampler);
        Ok(base.iter().map(|&q| bounded_noise(&noise, q, mech, rng)).collect())
    })?;
    out.blind = advisee_row.is_none();
    Ok(out)
}

/// Add one attack-noise draw to every entry of an already perturbed vector
/// and clamp into `[lower, upper]`.
pub fn external_inject<R: Rng + ?Sized>(
    benign: &[f64],
    profile: &AdversarialProfile,
    sampler: NoiseSampler,
    mech: &BoundedLaplace,
    rng: &mut R,
) -> Vec<f64> {
    let noise = profile.noise(sampler);
    benign.iter().map(|&v| mech.clamp(v + noise.sample(rng))).collect()
}

/// Channel attack: the adaptive loop over [`external_inject`] candidates.
pub fn pelpa_external<R: Rng + ?Sized>(
    benign: &[f64],
    advisee_row: Option<&[f64]>,
    ladder: &ProfileLadder,
    sampler: NoiseSampler,
    mech: &BoundedLaplace,
    rng: &mut R,
) -> Result<PelpaOutcome> {
    let reference = advisee_row.unwrap_or(benign);
    let mut out = adaptive_loop(reference, ladder, |profile| {
        Ok(external_inject(benign, profile, sampler, mech, rng))
    })?;
    out.blind = advisee_row.is_none();
    Ok(out)
}
