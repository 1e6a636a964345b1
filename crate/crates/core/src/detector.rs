//! Threshold anomaly detector over received advice, plus the outlier
//! calibration experiment that motivates the tolerance multiplier κ.
//!
//! Without DP a value alarms when it strays more than τ from the reference
//! `Q₀`; with DP the threshold widens to `τ′ = τ·κ`, which opens a poisoning
//! window of `|τ(1−κ)|`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attack::{AdversarialProfile, NoiseSampler};
use crate::dist::open_unit;
use crate::error::{Error, Result};
use crate::privacy::BoundedLaplace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorParams {
    pub enabled: bool,
    /// Base threshold τ.
    pub tau: f64,
    /// Tolerance multiplier κ.
    pub kappa: f64,
    /// Drop alarmed records instead of only logging them.
    pub blocking: bool,
    /// Acceptable per-episode alarm rate on benign DP advice.
    pub false_positive_ceiling: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            enabled: true,
            tau: 100.0,
            kappa: 1000.0,
            blocking: false,
            false_positive_ceiling: 0.01,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("detector.tau must be positive, got {}", self.tau)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("detector.kappa must be positive, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.false_positive_ceiling) {
            return Err(Error::Config("detector.false_positive_ceiling must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// τ′ = τ·κ.
    pub fn tau_prime(&self) -> f64 {
        self.tau * self.kappa
    }

    /// `|τ(1−κ)|`.
    pub fn poisoning_window(&self) -> f64 {
        (self.tau * (1.0 - self.kappa)).abs()
    }

    pub fn threshold(&self, dp_enabled: bool) -> f64 {
        if dp_enabled {
            self.tau_prime()
        } else {
            self.tau
        }
    }
}

/// Per-(state, action) running mean of accepted advice, starting at 0.
#[derive(Debug, Clone)]
pub struct ReferenceTracker {
    actions: usize,
    q0: Vec<f64>,
    counts: Vec<u64>,
}

impl ReferenceTracker {
    pub fn new(states: usize, actions: usize) -> Self {
        ReferenceTracker {
            actions,
            q0: vec![0.0; states * actions],
            counts: vec![0; states * actions],
        }
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.q0[state * self.actions..(state + 1) * self.actions]
    }

    fn covers(&self, state: usize, len: usize) -> Result<()> {
        if (state + 1) * self.actions > self.q0.len() || len != self.actions {
            return Err(Error::Precondition(format!(
                "tracker has no entry for state {state} with {len} actions"
            )));
        }
        Ok(())
    }

    /// Fold one accepted vector into the running means.
    pub fn accept(&mut self, state: usize, values: &[f64]) -> Result<()> {
        self.covers(state, values.len())?;
        for (a, &v) in values.iter().enumerate() {
            let i = state * self.actions + a;
            self.counts[i] += 1;
            self.q0[i] += (v - self.q0[i]) / self.counts[i] as f64;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckResult {
    pub alarm: bool,
    pub max_deviation: f64,
    pub threshold: f64,
}

/// Largest `|value − Q₀(s,a)|` over the vector.
pub fn max_deviation(values: &[f64], reference: &[f64]) -> f64 {
    values
        .iter()
        .zip(reference)
        .map(|(v, q)| (v - q).abs())
        .fold(0.0, f64::max)
}

/// Test one advice vector for `state`. Accepted vectors update the tracker.
pub fn check(
    values: &[f64],
    state: usize,
    tracker: &mut ReferenceTracker,
    params: &DetectorParams,
    dp_enabled: bool,
) -> Result<CheckResult> {
    tracker.covers(state, values.len())?;
    let threshold = params.threshold(dp_enabled);
    let max_deviation = max_deviation(values, tracker.row(state));
    let alarm = max_deviation > threshold;
    if !alarm {
        tracker.accept(state, values)?;
    }
    Ok(CheckResult {
        alarm,
        max_deviation,
        threshold,
    })
}

/// Outlier counts and squared attack error for one batch of `n` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOutcome {
    pub outliers_nodp: u64,
    pub outliers_dp: u64,
    pub outliers_attack: u64,
    pub sum_sq_error: f64,
    pub n: usize,
}

impl CalibrationOutcome {
    pub fn rmse(&self) -> f64 {
        (self.sum_sq_error / self.n as f64).sqrt()
    }
}

/// Settings shared by every repetition of the calibration experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSetup {
    pub n: usize,
    pub tau: f64,
    pub kappa: f64,
    pub sampler: NoiseSampler,
    pub mechanism: BoundedLaplace,
}

impl CalibrationSetup {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Parameter("calibration needs n >= 1".into()));
        }
        if !(self.tau > 0.0 && self.kappa > 0.0) {
            return Err(Error::Parameter("calibration needs positive tau and kappa".into()));
        }
        Ok(())
    }

    fn cutoff(&self) -> f64 {
        self.tau * self.kappa
    }

    fn window(&self) -> f64 {
        (self.tau * (1.0 - self.kappa)).abs()
    }
}

/// The per-repetition random inputs, drawn once so that several γ can be
/// compared on common random numbers.
#[derive(Debug, Clone)]
pub struct CalibrationDraws {
    pub originals: Vec<f64>,
    pub perturbed: Vec<f64>,
    pub attack_uniforms: Vec<f64>,
}

impl CalibrationDraws {
    pub fn draw<R: Rng + ?Sized>(setup: &CalibrationSetup, rng: &mut R) -> Result<Self> {
        setup.validate()?;
        let m = setup.mechanism;
        let originals: Vec<f64> = (0..setup.n)
            .map(|_| rng.random_range(m.lower()..=m.upper()))
            .collect();
        let perturbed = m.perturb_vector(&originals, rng)?;
        let attack_uniforms = (0..setup.n).map(|_| open_unit(rng)).collect();
        Ok(CalibrationDraws {
            originals,
            perturbed,
            attack_uniforms,
        })
    }

    /// Evaluate one γ on these draws.
    ///
    /// Each item is its own reference, so raw values never alarm. Attack
    /// values are `x + η` with η drawn from the adversarial distribution
    /// restricted to the poisoning window and to the value bounds.
    pub fn evaluate(&self, setup: &CalibrationSetup, profile: &AdversarialProfile) -> CalibrationOutcome {
        let m = setup.mechanism;
        let (cutoff, window) = (setup.cutoff(), setup.window());
        let noise = profile.noise(setup.sampler);
        let mut out = CalibrationOutcome {
            outliers_nodp: 0,
            outliers_dp: 0,
            outliers_attack: 0,
            sum_sq_error: 0.0,
            n: setup.n,
        };
        for i in 0..setup.n {
            let x = self.originals[i];
            // the raw value is its own reference
            let raw_deviation = 0.0;
            if raw_deviation > cutoff {
                out.outliers_nodp += 1;
            }
            if (self.perturbed[i] - x).abs() > cutoff {
                out.outliers_dp += 1;
            }
            let lo = (m.lower() - x).max(-window);
            let hi = (m.upper() - x).min(window);
            let eta = noise.truncated_quantile(self.attack_uniforms[i], lo, hi);
            if eta.abs() > cutoff {
                out.outliers_attack += 1;
            }
            out.sum_sq_error += eta * eta;
        }
        out
    }
}

/// One repetition of the outlier experiment at a single γ.
pub fn calibration_experiment<R: Rng + ?Sized>(
    setup: &CalibrationSetup,
    gamma: f64,
    theta: f64,
    rng: &mut R,
) -> Result<CalibrationOutcome> {
    let profile = AdversarialProfile::new(gamma, setup.mechanism.scale(), theta)?;
    let draws = CalibrationDraws::draw(setup, rng)?;
    Ok(draws.evaluate(setup, &profile))
}

/// Averages over repetitions for one γ; RMSE pooled over all values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub kappa: f64,
    pub gamma: f64,
    pub tau: f64,
    pub reps: usize,
    pub n: usize,
    pub outliers_nodp: f64,
    pub outliers_dp: f64,
    pub outliers_attack: f64,
    pub rmse: f64,
}

impl CalibrationRow {
    /// Attack outliers minus no-DP outliers.
    pub fn outlier_gap(&self) -> f64 {
        self.outliers_attack - self.outliers_nodp
    }
}

pub const CALIBRATION_HEADER: &str =
    "kappa,gamma,tau,reps,n,outliers_nodp,outliers_dp,outliers_attack,outlier_gap,rmse";

pub fn calibration_csv(rows: &[CalibrationRow]) -> String {
    let mut out = String::from(CALIBRATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.kappa,
            r.gamma,
            r.tau,
            r.reps,
            r.n,
            r.outliers_nodp,
            r.outliers_dp,
            r.outliers_attack,
            r.outlier_gap(),
            r.rmse
        ));
    }
    out
}

/// Run `reps` repetitions and evaluate every γ on the same draws.
pub fn calibration_sweep<R: Rng + ?Sized>(
    setup: &CalibrationSetup,
    gammas: &[f64],
    theta: f64,
    reps: usize,
    rng: &mut R,
) -> Result<Vec<CalibrationRow>> {
    if reps == 0 {
        return Err(Error::Parameter("calibration needs reps >= 1".into()));
    }
    let profiles = gammas
        .iter()
        .map(|&g| AdversarialProfile::new(g, setup.mechanism.scale(), theta))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![(0u64, 0u64, 0u64, 0.0f64); gammas.len()];
    for _ in 0..reps {
        let draws = CalibrationDraws::draw(setup, rng)?;
        for (t, p) in totals.iter_mut().zip(&profiles) {
            let o = draws.evaluate(setup, p);
            t.0 += o.outliers_nodp;
            t.1 += o.outliers_dp;
            t.2 += o.outliers_attack;
            t.3 += o.sum_sq_error;
        }
    }
    let r = reps as f64;
    Ok(gammas
        .iter()
        .zip(totals)
        .map(|(&gamma, (nodp, dp, att, sq))| CalibrationRow {
            kappa: setup.kappa,
            gamma,
            tau: setup.tau,
            reps,
            n: setup.n,
            outliers_nodp: nodp as f64 / r,
            outliers_dp: dp as f64 / r,
            outliers_attack: att as f64 / r,
            rmse: (sq / (r * setup.n as f64)).sqrt(),
        })
        .collect())
}

/// Whether `value` lies within ±10% of `baseline`.
pub fn within_ten_percent(value: f64, baseline: f64) -> bool {
    (value - baseline).abs() <= 0.1 * baseline.abs()
}

/// Smallest integer κ in `1..=max_kappa` whose benign-DP outlier count is
/// within ±10% of the no-DP count.
pub fn calibrate_kappa<R: Rng + ?Sized>(
    setup: &CalibrationSetup,
    reps: usize,
    max_kappa: u32,
    rng: &mut R,
) -> Result<Option<f64>> {
    for k in 1..=max_kappa {
        let s = CalibrationSetup {
            kappa: f64::from(k),
            ..*setup
        };
        // γ only affects the attack column, which is ignored here
        let row = calibration_sweep(&s, &[1.0], 0.0, reps, rng)?[0];
        if within_ten_percent(row.outliers_dp, row.outliers_nodp) {
            return Ok(Some(f64::from(k)));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use proptest::prelude::*;

    fn setup(kappa: f64) -> CalibrationSetup {
        CalibrationSetup {
            n: 100,
            tau: 1.0,
            kappa,
            sampler: NoiseSampler::Tilted,
            mechanism: BoundedLaplace::new(-1.5, 10.0, 1.15).unwrap(),
        }
    }

    #[test]
    fn default_thresholds_and_window() {
        let p = DetectorParams::default();
        assert_eq!(p.tau_prime(), 100_000.0);
        assert_eq!(p.poisoning_window(), 99_900.0);
        assert_eq!(p.threshold(false), 100.0);
        assert_eq!(p.threshold(true), 100_000.0);
    }

    #[test]
    fn check_boundaries() {
        let p = DetectorParams::default();
        let mut t = ReferenceTracker::new(3, 2);
        let r = check(&[0.0, 0.0], 1, &mut t, &p, true).unwrap();
        assert!(!r.alarm);
        assert_eq!(r.max_deviation, 0.0);

        let mut t = ReferenceTracker::new(3, 2);
        let r = check(&[0.0, p.tau_prime() + 1e-6], 1, &mut t, &p, true).unwrap();
        assert!(r.alarm);
        // alarmed record did not move the reference
        assert_eq!(t.row(1), &[0.0, 0.0]);
        // the same vector passes the base threshold only if dp widens it
        let r = check(&[0.0, 150.0], 1, &mut t, &p, false).unwrap();
        assert!(r.alarm);
        let r = check(&[0.0, 150.0], 1, &mut t, &p, true).unwrap();
        assert!(!r.alarm);
    }

    #[test]
    fn tracker_is_running_mean() {
        let mut t = ReferenceTracker::new(1, 2);
        for v in [[1.0, 4.0], [3.0, 0.0], [5.0, 2.0]] {
            t.accept(0, &v).unwrap();
        }
        assert!((t.row(0)[0] - 3.0).abs() < 1e-12);
        assert!((t.row(0)[1] - 2.0).abs() < 1e-12);
        assert!(matches!(t.accept(1, &[0.0, 0.0]), Err(Error::Precondition(_))));
        assert!(matches!(t.accept(0, &[0.0]), Err(Error::Precondition(_))));
    }

    #[test]
    fn nodp_outliers_match_noise_free_baseline() {
        let mut rng = substream(3, Stream::Env);
        let out = calibration_experiment(&setup(1.0), 2.0, 0.0, &mut rng).unwrap();
        assert_eq!(out.outliers_nodp, 0);
        assert_eq!(out.n, 100);
    }

    #[test]
    fn dp_adds_false_positives_at_unit_kappa() {
        let rows = calibration_sweep(&setup(1.0), &[1.0], 0.0, 200, &mut substream(4, Stream::Env)).unwrap();
        assert!(rows[0].outliers_dp > rows[0].outliers_nodp);
    }

    #[test]
    fn calibrated_kappa_and_rmse_growth() {
        let mut rng = substream(5, Stream::Env);
        let kappa = calibrate_kappa(&setup(1.0), 200, 50, &mut rng).unwrap().unwrap();
        let gammas: Vec<f64> = (1..=8).map(f64::from).collect();
        let rows = calibration_sweep(&setup(kappa), &gammas, 0.0, 200, &mut rng).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].rmse > w[0].rmse, "{:?}", rows.iter().map(|r| r.rmse).collect::<Vec<_>>());
        }
        for r in &rows {
            assert!(within_ten_percent(r.outliers_attack, r.outliers_nodp));
        }
    }

    #[test]
    fn calibration_rejects_empty_input() {
        let s = CalibrationSetup { n: 0, ..setup(1.0) };
        assert!(calibration_experiment(&s, 1.0, 0.0, &mut substream(0, Stream::Env)).is_err());
        assert!(calibration_sweep(&setup(1.0), &[1.0], 0.0, 0, &mut substream(0, Stream::Env)).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = calibration_sweep(&setup(2.0), &[1.0, 2.0], 0.0, 3, &mut substream(6, Stream::Env)).unwrap();
        let text = calibration_csv(&rows);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], CALIBRATION_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1].split(',').count(), 10);
    }

    proptest! {
        #[test]
        fn check_is_monotone_in_threshold(
            values in proptest::collection::vec(-200.0f64..200.0, 5),
            hi in 1.0f64..300.0,
            frac in 0.0f64..1.0,
        ) {
            let lo = hi * frac;
            let p_hi = DetectorParams { tau: hi, ..Default::default() };
            let p_lo = DetectorParams { tau: lo.max(1e-9), ..Default::default() };
            let a = check(&values, 0, &mut ReferenceTracker::new(1, 5), &p_hi, false).unwrap();
            let b = check(&values, 0, &mut ReferenceTracker::new(1, 5), &p_lo, false).unwrap();
            prop_assert!(!a.alarm || b.alarm);
        }

        #[test]
        fn window_arithmetic(tau in 0.01f64..1e3, kappa in 0.01f64..1e4) {
            let p = DetectorParams { tau, kappa, ..Default::default() };
            prop_assert_eq!(p.poisoning_window(), (tau * (1.0 - kappa)).abs());
            prop_assert_eq!(p.tau_prime(), tau * kappa);
        }
    }
}
