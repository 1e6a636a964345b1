//! Experiment configuration: a TOML document with one table per module,
//! scale presets, and `key=value` overrides addressed by dotted paths.

use serde::{Deserialize, Serialize};

use crate::advice::AdviceParams;
use crate::agent::LearnerParams;
use crate::attack::AttackParams;
use crate::detector::DetectorParams;
use crate::env::{Cell, RewardSchedule, WorldSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricsParams;
use crate::privacy::PrivacyParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Small,
    Medium,
    Large,
}

impl Scale {
    /// `(side, agents, obstacles, episodes)`.
    fn preset(self) -> (usize, usize, usize, usize) {
        match self {
            Scale::Small => (5, 5, 1, 3000),
            Scale::Medium => (10, 10, 3, 5000),
            Scale::Large => (15, 20, 5, 8000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub scale: Scale,
    /// Episodes per arm; defaults to the scale's horizon.
    pub episodes: Option<usize>,
    /// Episodes of the reference run; defaults to `episodes`.
    pub baseline_episodes: Option<usize>,
    pub seeds: Vec<u64>,
    pub attacker_ratios: Vec<f64>,
    /// Write every advice exchange to `advice_log.csv`.
    pub log_advice: bool,
    /// Write every alarm to `alarms.csv`.
    pub log_alarms: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            scale: Scale::Medium,
            episodes: None,
            baseline_episodes: None,
            seeds: (0..10).collect(),
            attacker_ratios: vec![0.0, 0.2, 0.4],
            log_advice: false,
            log_alarms: false,
        }
    }
}

/// Explicit world dimensions; unset fields come from the scale preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub height: Option<usize>,
    pub width: Option<usize>,
    pub agents: Option<usize>,
    pub obstacles: Option<usize>,
    /// Freeway cell count; defaults to 2 per 25 cells.
    pub freeways: Option<usize>,
    /// `[row, col]`; defaults to the bottom-right corner.
    pub goal: Option<[usize; 2]>,
    pub step_limit: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            height: None,
            width: None,
            agents: None,
            obstacles: None,
            freeways: None,
            goal: None,
            step_limit: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub reward: RewardSchedule,
    pub learner: LearnerParams,
    pub privacy: PrivacyParams,
    pub advice: AdviceParams,
    pub attack: AttackParams,
    pub detector: DetectorParams,
    pub metrics: MetricsParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse `text`, apply `overrides` (`section.key=value`), then validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn world_spec(&self) -> WorldSpec {
        let (side, agents, obstacles, _) = self.run.scale.preset();
        let height = self.env.height.unwrap_or(side);
        let width = self.env.width.unwrap_or(side);
        let goal = self
            .env
            .goal
            .map(|[x, y]| Cell::new(x, y))
            .unwrap_or(Cell::new(height.saturating_sub(1), width.saturating_sub(1)));
        WorldSpec {
            height,
            width,
            agents: self.env.agents.unwrap_or(agents),
            obstacles: self.env.obstacles.unwrap_or(obstacles),
            freeways: self.env.freeways.unwrap_or(2 * height * width / 25),
            goal,
            step_limit: self.env.step_limit,
            rewards: self.reward,
        }
    }

    pub fn episodes(&self) -> usize {
        self.run.episodes.unwrap_or(self.run.scale.preset().3)
    }

    pub fn baseline_episodes(&self) -> usize {
        self.run.baseline_episodes.unwrap_or(self.episodes())
    }

    /// Number of compromised agents for `ratio`: `⌈ratio·N⌉`.
    pub fn attacker_count(&self, ratio: f64) -> usize {
        let n = self.world_spec().agents;
        // guard against 0.1 * 30 = 3.0000000000000004
        (((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
    }

    /// LDP noise scale `b`.
    pub fn noise_scale(&self) -> f64 {
        self.privacy.scale(self.learner.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        if self.run.attacker_ratios.is_empty() {
            return Err(Error::Config("run.attacker_ratios must not be empty".into()));
        }
        for &r in &self.run.attacker_ratios {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("attacker ratio {r} outside [0, 1]")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for &s in &self.run.seeds {
            if !seen.insert(s) {
                return Err(Error::Config(format!("seed {s} listed twice")));
            }
        }
        let mut ratios = self.run.attacker_ratios.clone();
        ratios.sort_by(f64::total_cmp);
        if ratios.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("attacker ratio listed twice".into()));
        }
        if self.episodes() == 0 || self.baseline_episodes() == 0 {
            return Err(Error::Config("episode counts must be positive".into()));
        }
        self.world_spec().validate()?;
        self.learner.validate()?;
        self.privacy.validate()?;
        self.advice.validate()?;
        self.attack.validate()?;
        self.detector.validate()?;
        self.metrics.validate()
    }
}

/// Apply one `dotted.key=value` override. The value is read as a TOML
/// value when it parses as one, otherwise as a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if key.is_empty() || parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{key}` crosses a non-table value")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
