//! Evaluation metrics: steps to goal Π, episode reward Φ, the ΔQ̄ distance
//! to a reference table, convergence detection, smoothing and seed
//! aggregation.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsParams {
    /// Trailing moving-average window.
    pub window: usize,
    /// Episodes the smoothed ΔQ̄ must stay under the threshold.
    pub persistence: usize,
    /// Threshold as a fraction of the initial ΔQ̄.
    pub convergence_fraction: f64,
    /// Absolute threshold; overrides `convergence_fraction` when set.
    pub convergence_threshold: Option<f64>,
}

impl Default for MetricsParams {
    fn default() -> Self {
        MetricsParams {
            window: 100,
            persistence: 50,
            convergence_fraction: 0.5,
            convergence_threshold: None,
        }
    }
}

impl MetricsParams {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("metrics.window must be at least 1".into()));
        }
        if self.persistence == 0 {
            return Err(Error::Config("metrics.persistence must be at least 1".into()));
        }
        if !(self.convergence_fraction > 0.0 && self.convergence_fraction.is_finite()) {
            return Err(Error::Config("metrics.convergence_fraction must be positive".into()));
        }
        if let Some(t) = self.convergence_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("metrics.convergence_threshold must be positive".into()));
            }
        }
        Ok(())
    }

    /// The ΔQ̄ threshold given the distance of an all-zero table to Q*.
    pub fn threshold(&self, initial_delta_q: f64) -> f64 {
        self.convergence_threshold
            .unwrap_or(self.convergence_fraction * initial_delta_q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DoneBy {
    Goal,
    StepLimit,
}

impl DoneBy {
    pub fn name(self) -> &'static str {
        match self {
            DoneBy::Goal => "goal",
            DoneBy::StepLimit => "step-limit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "goal" => Some(DoneBy::Goal),
            "step-limit" => Some(DoneBy::StepLimit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Π: rounds until the episode ended.
    pub steps: usize,
    pub done_by: DoneBy,
    /// Φ: cumulative reward of the agent that reached the goal, or the mean
    /// over agents when the step limit ended the episode.
    pub reward: f64,
    pub delta_q: f64,
    pub alarms: u64,
    /// γ of every poisoned vector sent during the episode.
    pub gamma_samples: Vec<u32>,
}

impl EpisodeMetrics {
    pub fn gamma_mean(&self) -> Option<f64> {
        if self.gamma_samples.is_empty() {
            return None;
        }
        let sum: u64 = self.gamma_samples.iter().map(|&g| u64::from(g)).sum();
        Some(sum as f64 / self.gamma_samples.len() as f64)
    }
}

/// Mean absolute elementwise difference.
pub fn delta_q(current: &QTable, reference: &QTable) -> Result<f64> {
    if current.state_count() != reference.state_count() || current.action_count() != reference.action_count() {
        return Err(Error::Precondition(format!(
            "table dimensions differ: {}x{} vs {}x{}",
            current.state_count(),
            current.action_count(),
            reference.state_count(),
            reference.action_count()
        )));
    }
    let n = current.values().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = current
        .values()
        .iter()
        .zip(reference.values())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Trailing moving average; the first `window − 1` points average over
/// what is available.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        let len = (i + 1).min(window);
        out.push(sum / len as f64);
    }
    out
}

/// First index `i` with `series[i..i + persistence]` all below `threshold`.
/// Expects an already smoothed series.
pub fn first_sustained_below(series: &[f64], threshold: f64, persistence: usize) -> Option<usize> {
    let persistence = persistence.max(1);
    let mut run = 0;
    for (i, &v) in series.iter().enumerate() {
        if v < threshold {
            run += 1;
            if run == persistence {
                return Some(i + 1 - persistence);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Smooth `series` with `window`, then find where it drops under
/// `threshold` and stays there for `persistence` episodes.
pub fn convergence_episode(series: &[f64], threshold: f64, window: usize, persistence: usize) -> Option<usize> {
    first_sustained_below(&moving_average(series, window), threshold, persistence)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub steps: Vec<f64>,
    pub reward: Vec<f64>,
    pub delta_q: Vec<f64>,
    pub convergence_episode: Option<usize>,
    pub gamma_hist: BTreeMap<u32, u64>,
}

impl RunSummary {
    /// Mean of the last `window` raw values, i.e. the final smoothed point.
    pub fn terminal_steps(&self) -> f64 {
        self.steps.last().copied().unwrap_or(f64::NAN)
    }

    pub fn terminal_reward(&self) -> f64 {
        self.reward.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn summarize_run(episodes: &[EpisodeMetrics], params: &MetricsParams, threshold: f64) -> Result<RunSummary> {
    if episodes.is_empty() {
        return Err(Error::Precondition("cannot summarize an empty run".into()));
    }
    let steps: Vec<f64> = episodes.iter().map(|e| e.steps as f64).collect();
    let reward: Vec<f64> = episodes.iter().map(|e| e.reward).collect();
    let dq: Vec<f64> = episodes.iter().map(|e| e.delta_q).collect();
    let delta_q = moving_average(&dq, params.window);
    let convergence_episode = first_sustained_below(&delta_q, threshold, params.persistence);
    let mut gamma_hist = BTreeMap::new();
    for g in episodes.iter().flat_map(|e| &e.gamma_samples) {
        *gamma_hist.entry(*g).or_insert(0) += 1;
    }
    Ok(RunSummary {
        steps: moving_average(&steps, params.window),
        reward: moving_average(&reward, params.window),
        delta_q,
        convergence_episode,
        gamma_hist,
    })
}

/// Per-index mean and sample standard deviation across equally long series.
/// The deviation is 0 for a single series.
pub fn mean_std(series: &[&[f64]]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = series.first() else {
        return Err(Error::Precondition("no series to aggregate".into()));
    };
    let len = first.len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Precondition("series lengths differ".into()));
    }
    let k = series.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for i in 0..len {
        let m = series.iter().map(|s| s[i]).sum::<f64>() / k;
        mean[i] = m;
        if series.len() > 1 {
            let ss: f64 = series.iter().map(|s| (s[i] - m).powi(2)).sum();
            std[i] = (ss / (k - 1.0)).sqrt();
        }
    }
    Ok((mean, std))
}

/// Count of bootstrap resamples in which the seed means are
/// strictly increasing across arms. `per_arm[a][s]` is arm `a`'s value for
/// seed `s`; each resample draws seed indices with replacement once and
/// applies them to every arm (seeds are paired across arms).
pub fn bootstrap_strict_order<R: Rng + ?Sized>(per_arm: &[Vec<f64>], resamples: usize, rng: &mut R) -> Result<usize> {
    let seeds = per_arm.first().map_or(0, Vec::len);
    if seeds == 0 || per_arm.iter().any(|a| a.len() != seeds) {
        return Err(Error::Precondition("every arm needs the same non-zero number of seeds".into()));
    }
    let mut ordered = 0;
    for _ in 0..resamples {
        let idx: Vec<usize> = (0..seeds).map(|_| rng.random_range(0..seeds)).collect();
        let means: Vec<f64> = per_arm
            .iter()
            .map(|arm| idx.iter().map(|&i| arm[i]).sum::<f64>() / seeds as f64)
            .collect();
        if means.windows(2).all(|w| w[0] < w[1]) {
            ordered += 1;
        }
    }
    Ok(ordered)
}
