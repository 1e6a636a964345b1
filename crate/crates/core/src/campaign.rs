//! Campaigns: a reference run per seed, then every (attacker ratio, seed)
//! arm, aggregated across seeds and written to an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{delta_q, mean_std, summarize_run, DoneBy, EpisodeMetrics, RunSummary};
use crate::sim::{select_attackers, AdviceLogRow, AlarmLogRow, RunSetup, Simulation};

/// Final state of the no-attack, no-DP reference run of one seed.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub seed: u64,
    pub episodes: Vec<EpisodeMetrics>,
    pub tables: Vec<QTable>,
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub ratio: f64,
    pub seed: u64,
    pub attackers: Vec<usize>,
    pub episodes: Vec<EpisodeMetrics>,
    pub summary: RunSummary,
    /// ΔQ̄ threshold used for the convergence episode.
    pub threshold: f64,
    pub advice_log: Vec<AdviceLogRow>,
    pub alarm_log: Vec<AlarmLogRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub ratio: f64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub config: ExperimentConfig,
    pub baselines: Vec<BaselineResult>,
    /// Successful arms, ordered by ratio (as configured) then seed.
    pub arms: Vec<ArmResult>,
    pub failures: Vec<ArmFailure>,
}

impl CampaignResult {
    pub fn arm(&self, ratio: f64, seed: u64) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.ratio == ratio && a.seed == seed)
    }

    pub fn arms_for(&self, ratio: f64) -> impl Iterator<Item = &ArmResult> {
        self.arms.iter().filter(move |a| a.ratio == ratio)
    }
}

/// Run the reference learner of one seed: same world and learners, no
/// attackers, no privacy noise.
pub fn run_baseline(cfg: &ExperimentConfig, seed: u64) -> Result<BaselineResult> {
    let mut quiet = cfg.clone();
    quiet.run.log_advice = false;
    quiet.run.log_alarms = false;
    let mut sim = Simulation::new(
        &quiet,
        RunSetup {
            root_seed: seed,
            attackers: Vec::new(),
            privacy: false,
            reference: None,
        },
    )?;
    let episodes = (0..cfg.baseline_episodes())
        .map(|_| sim.run_episode())
        .collect::<Result<Vec<_>>>()?;
    Ok(BaselineResult {
        seed,
        episodes,
        tables: sim.into_tables(),
    })
}

/// Mean over agents of the distance from an all-zero table to the reference.
pub fn initial_delta_q(reference: &[QTable]) -> Result<f64> {
    let mut sum = 0.0;
    for r in reference {
        sum += delta_q(&QTable::zeros(r.state_count(), r.action_count()), r)?;
    }
    Ok(sum / reference.len().max(1) as f64)
}

pub fn run_arm(cfg: &ExperimentConfig, ratio: f64, seed: u64, reference: &[QTable]) -> Result<ArmResult> {
    let n = cfg.world_spec().agents;
    let attackers = select_attackers(seed, n, cfg.attacker_count(ratio));
    let mut sim = Simulation::new(
        cfg,
        RunSetup {
            root_seed: seed,
            attackers: attackers.clone(),
            privacy: cfg.privacy.enabled,
            reference: Some(reference.to_vec()),
        },
    )?;
    let episodes = (0..cfg.episodes())
        .map(|_| sim.run_episode())
        .collect::<Result<Vec<_>>>()?;
    let threshold = cfg.metrics.threshold(initial_delta_q(reference)?);
    let summary = summarize_run(&episodes, &cfg.metrics, threshold)?;
    Ok(ArmResult {
        ratio,
        seed,
        attackers,
        episodes,
        summary,
        threshold,
        advice_log: sim.take_advice_log(),
        alarm_log: sim.take_alarm_log(),
    })
}

/// Reference runs first, then all arms in parallel. An arm that fails is
/// recorded and the rest of the campaign carries on.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignResult> {
    cfg.validate()?;
    let baseline_runs: Vec<(u64, Result<BaselineResult>)> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_baseline(cfg, seed)))
        .collect();

    let mut baselines = Vec::new();
    let mut failures = Vec::new();
    let mut jobs = Vec::new();
    for &ratio in &cfg.run.attacker_ratios {
        for (seed, b) in &baseline_runs {
            match b {
                Ok(b) => jobs.push((ratio, *seed, &b.tables)),
                Err(e) => failures.push(ArmFailure {
                    ratio,
                    seed: *seed,
                    error: format!("reference run failed: {e}"),
                }),
            }
        }
    }
    let outcomes: Vec<(f64, u64, Result<ArmResult>)> = jobs
        .par_iter()
        .map(|&(ratio, seed, reference)| (ratio, seed, run_arm(cfg, ratio, seed, reference)))
        .collect();
    let mut arms = Vec::new();
    for (ratio, seed, r) in outcomes {
        match r {
            Ok(a) => arms.push(a),
            Err(e) => failures.push(ArmFailure {
                ratio,
                seed,
                error: e.to_string(),
            }),
        }
    }
    for (_, b) in baseline_runs {
        if let Ok(b) = b {
            baselines.push(b);
        }
    }
    Ok(CampaignResult {
        config: cfg.clone(),
        baselines,
        arms,
        failures,
    })
}

/// One `episodes.csv` line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub done_by: DoneBy,
    pub reward: f64,
    pub delta_q: f64,
    pub alarms: u64,
    pub gamma_count: usize,
    pub gamma_mean: Option<f64>,
}

impl From<&EpisodeMetrics> for EpisodeRow {
    fn from(e: &EpisodeMetrics) -> Self {
        EpisodeRow {
            episode: e.episode,
            steps: e.steps,
            done_by: e.done_by,
            reward: e.reward,
            delta_q: e.delta_q,
            alarms: e.alarms,
            gamma_count: e.gamma_samples.len(),
            gamma_mean: e.gamma_mean(),
        }
    }
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::parse("csv", e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::parse("csv", e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("csv", e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub const EPISODE_HEADER: [&str; 8] = [
    "episode",
    "steps",
    "done_by",
    "reward",
    "delta_q",
    "alarms",
    "gamma_count",
    "gamma_mean",
];

pub fn episodes_csv(episodes: &[EpisodeMetrics]) -> Result<String> {
    to_csv(episodes.iter().map(EpisodeRow::from), &EPISODE_HEADER)
}

pub fn read_episodes_csv(text: &str) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::parse("episodes csv", e))?;
    if header.iter().ne(EPISODE_HEADER) {
        return Err(Error::parse("episodes csv", format!("unexpected header {header:?}")));
    }
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<EpisodeRow>, _>>()
        .map_err(|e| Error::parse("episodes csv", e))?;
    for (i, row) in rows.iter().enumerate() {
        if row.episode != i {
            return Err(Error::parse("episodes csv", format!("row {i} has episode {}", row.episode)));
        }
    }
    Ok(rows)
}

/// Smoothed series of one ratio, mean (and sample std with several seeds)
/// across seeds.
pub fn ratio_summary_csv(arms: &[&ArmResult]) -> Result<String> {
    let pick = |f: fn(&RunSummary) -> &Vec<f64>| -> Result<(Vec<f64>, Vec<f64>)> {
        let series: Vec<&[f64]> = arms.iter().map(|a| f(&a.summary).as_slice()).collect();
        mean_std(&series)
    };
    let (steps, steps_sd) = pick(|s| &s.steps)?;
    let (reward, reward_sd) = pick(|s| &s.reward)?;
    let (dq, dq_sd) = pick(|s| &s.delta_q)?;
    let with_std = arms.len() > 1;
    let mut out = String::from(if with_std {
        "episode,steps_mean,steps_std,reward_mean,reward_std,delta_q_mean,delta_q_std\n"
    } else {
        "episode,steps_mean,reward_mean,delta_q_mean\n"
    });
    for i in 0..steps.len() {
        if with_std {
            out.push_str(&format!(
                "{i},{},{},{},{},{},{}\n",
                steps[i], steps_sd[i], reward[i], reward_sd[i], dq[i], dq_sd[i]
            ));
        } else {
            out.push_str(&format!("{i},{},{},{}\n", steps[i], reward[i], dq[i]));
        }
    }
    Ok(out)
}

/// A parsed numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Read a CSV whose every field parses as a number.
pub fn read_numeric_csv(text: &str) -> Result<NumericTable> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let columns: Vec<String> = r
        .headers()
        .map_err(|e| Error::parse("csv", e))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.is_empty() || columns.iter().any(String::is_empty) {
        return Err(Error::parse("csv", "empty header"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse("csv", e))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|e| Error::parse("csv", format!("{f:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(NumericTable { columns, rows })
}

/// Directory-name form of a ratio, e.g. `ratio_0.2`.
pub fn ratio_dir(ratio: f64) -> String {
    format!("ratio_{ratio}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestArm {
    pub ratio: f64,
    pub seed: u64,
    pub attackers: Vec<usize>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Derived {
    pub noise_scale: f64,
    pub sensitivity: f64,
    pub kappa: f64,
    pub tau_prime: f64,
    pub poisoning_window: f64,
    pub episodes: usize,
    pub baseline_episodes: usize,
    pub height: usize,
    pub width: usize,
    pub agents: usize,
    pub obstacles: usize,
    pub freeways: usize,
    pub goal: [usize; 2],
}

/// Everything needed to rerun a campaign. Only `config` drives a replay;
/// the rest documents what the run resolved to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub version: String,
    pub streams: Vec<String>,
    pub derived: Derived,
    pub arms: Vec<ManifestArm>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn for_config(cfg: &ExperimentConfig) -> Self {
        let w = cfg.world_spec();
        let arms = cfg
            .run
            .attacker_ratios
            .iter()
            .flat_map(|&ratio| {
                cfg.run.seeds.iter().map(move |&seed| ManifestArm {
                    ratio,
                    seed,
                    attackers: select_attackers(seed, w.agents, cfg.attacker_count(ratio)),
                    status: "pending".into(),
                })
            })
            .collect();
        RunManifest {
            version: env!("CARGO_PKG_VERSION").into(),
            streams: [
                "env",
                "attacker-selection",
                "policy(agent)",
                "advice(agent)",
                "attack(agent)",
                "privacy(agent)",
            ]
            .map(String::from)
            .to_vec(),
            derived: Derived {
                noise_scale: cfg.noise_scale(),
                sensitivity: cfg.privacy.sensitivity(),
                kappa: cfg.detector.kappa,
                tau_prime: cfg.detector.tau_prime(),
                poisoning_window: cfg.detector.poisoning_window(),
                episodes: cfg.episodes(),
                baseline_episodes: cfg.baseline_episodes(),
                height: w.height,
                width: w.width,
                agents: w.agents,
                obstacles: w.obstacles,
                freeways: w.freeways,
                goal: [w.goal.x, w.goal.y],
            },
            arms,
            config: cfg.clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: RunManifest = toml::from_str(text).map_err(|e| Error::parse("manifest", e))?;
        m.config.validate()?;
        Ok(m)
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write every artifact of `result` under `out`. Returns the manifest path.
pub fn write_campaign(result: &CampaignResult, out: &Path) -> Result<PathBuf> {
    let cfg = &result.config;
    let mut manifest = RunManifest::for_config(cfg);
    for arm in &mut manifest.arms {
        let failed = result
            .failures
            .iter()
            .find(|f| f.ratio == arm.ratio && f.seed == arm.seed);
        arm.status = match failed {
            Some(f) => format!("failed: {}", f.error),
            None => "ok".into(),
        };
    }
    let manifest_path = out.join("manifest");
    write(&manifest_path, &manifest.to_toml()?)?;

    for b in &result.baselines {
        let dir = out.join("baseline").join(format!("seed_{}", b.seed));
        write(&dir.join("episodes.csv"), &episodes_csv(&b.episodes)?)?;
        for (i, t) in b.tables.iter().enumerate() {
            write(&dir.join(format!("qtable_agent_{i}.csv")), &t.to_csv())?;
        }
    }

    let mut gamma_hist = String::from("ratio,gamma,count\n");
    let mut arm_rows = String::from("ratio,seed,attackers,convergence_episode,threshold,terminal_steps,terminal_reward\n");
    for &ratio in &cfg.run.attacker_ratios {
        let arms: Vec<&ArmResult> = result.arms_for(ratio).collect();
        for a in &arms {
            let dir = out.join(ratio_dir(ratio)).join(format!("seed_{}", a.seed));
            write(&dir.join("episodes.csv"), &episodes_csv(&a.episodes)?)?;
            if cfg.run.log_advice {
                let header = ["episode", "step", "advisee", "advisor", "state", "action", "value", "malicious"];
                write(&dir.join("advice_log.csv"), &to_csv(&a.advice_log, &header)?)?;
            }
            if cfg.run.log_alarms {
                let header = ["episode", "step", "advisee", "advisor", "state", "max_deviation", "threshold", "verdict"];
                write(&dir.join("alarms.csv"), &to_csv(&a.alarm_log, &header)?)?;
            }
            arm_rows.push_str(&format!(
                "{ratio},{},{},{},{},{},{}\n",
                a.seed,
                a.attackers.len(),
                a.summary.convergence_episode.map_or(String::new(), |c| c.to_string()),
                a.threshold,
                a.summary.terminal_steps(),
                a.summary.terminal_reward()
            ));
        }
        if arms.is_empty() {
            continue;
        }
        write(
            &out.join("summary").join(format!("{}.csv", ratio_dir(ratio))),
            &ratio_summary_csv(&arms)?,
        )?;
        let mut hist = std::collections::BTreeMap::new();
        for a in &arms {
            for (g, c) in &a.summary.gamma_hist {
                *hist.entry(*g).or_insert(0u64) += c;
            }
        }
        for (g, c) in hist {
            gamma_hist.push_str(&format!("{ratio},{g},{c}\n"));
        }
    }
    write(&out.join("summary").join("gamma_hist.csv"), &gamma_hist)?;
    write(&out.join("summary").join("arms.csv"), &arm_rows)?;
    crate::plot::render_dir(out)?;
    Ok(manifest_path)
}

/// Re-run the campaign described by a manifest and write it to `out`.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<CampaignResult> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = RunManifest::from_toml(&text)?;
    let result = run_campaign(&manifest.config)?;
    write_campaign(&result, out)?;
    Ok(result)
}
