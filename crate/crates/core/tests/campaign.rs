use std::fs;

use pelpa_core::campaign::{read_episodes_csv, read_numeric_csv};
use pelpa_core::detector::DetectorParams;
use pelpa_core::{replay, run_campaign, write_campaign, ExperimentConfig, RunManifest};

fn small(extra: &str) -> ExperimentConfig {
    let text = format!("[run]\nscale = \"small\"\nepisodes = 40\nseeds = [5, 9]\nattacker_ratios = [0.0, 0.4]\n{extra}");
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn written_campaign_has_the_documented_layout() {
    let cfg = small("log_advice = true\nlog_alarms = true\n");
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_campaign(&run_campaign(&cfg).unwrap(), dir.path()).unwrap();
    let root = dir.path();
    for rel in [
        "manifest",
        "baseline/seed_5/episodes.csv",
        "baseline/seed_5/qtable_agent_0.csv",
        "ratio_0.4/seed_9/episodes.csv",
        "ratio_0.4/seed_9/advice_log.csv",
        "ratio_0.4/seed_9/alarms.csv",
        "summary/ratio_0.csv",
        "summary/ratio_0.4.csv",
        "summary/gamma_hist.csv",
        "summary/arms.csv",
        "plots/steps.svg",
        "plots/delta_q.svg",
    ] {
        assert!(root.join(rel).is_file(), "missing {rel}");
    }
    let eps = read_episodes_csv(&fs::read_to_string(root.join("ratio_0.4/seed_9/episodes.csv")).unwrap()).unwrap();
    assert_eq!(eps.len(), 40);
    let m = RunManifest::from_toml(&fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(m.config, cfg);
    assert!(m.arms.iter().all(|a| a.status == "ok"));
    let summary = read_numeric_csv(&fs::read_to_string(root.join("summary/ratio_0.4.csv")).unwrap()).unwrap();
    assert!(summary.column("steps_std").is_some());
    assert_eq!(summary.rows.len(), 40);
}

#[test]
fn single_seed_summary_has_no_spread_columns() {
    let mut cfg = small("");
    cfg.run.seeds = vec![4];
    let dir = tempfile::tempdir().unwrap();
    write_campaign(&run_campaign(&cfg).unwrap(), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("summary/ratio_0.csv")).unwrap();
    assert!(text.starts_with("episode,steps_mean,reward_mean,delta_q_mean\n"));
}

#[test]
fn replay_reproduces_episode_files() {
    let cfg = small("");
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_campaign(&run_campaign(&cfg).unwrap(), &dir.path().join("a")).unwrap();
    replay(&manifest, &dir.path().join("b")).unwrap();
    for rel in ["ratio_0/seed_5/episodes.csv", "ratio_0.4/seed_9/episodes.csv", "summary/arms.csv"] {
        let a = fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{rel}");
    }
}

#[test]
fn benign_ldp_advice_stays_under_the_false_positive_ceiling() {
    // no attackers and a DP threshold at its default scaling
    let mut cfg = small("log_advice = true\n");
    cfg.run.attacker_ratios = vec![0.0];
    cfg.run.episodes = Some(150);
    let r = run_campaign(&cfg).unwrap();
    let ceiling = DetectorParams::default().false_positive_ceiling;
    for arm in &r.arms {
        let checked = arm.advice_log.len() / 5;
        let alarms: u64 = arm.episodes.iter().map(|e| e.alarms).sum();
        assert!(checked > 0);
        assert!((alarms as f64) / (checked as f64) <= ceiling, "{alarms} alarms over {checked} vectors");
    }
}

#[test]
fn blocking_detector_logs_blocked_verdicts() {
    // a threshold far below the noise level alarms on nearly everything
    let mut cfg = small("log_alarms = true\n[detector]\nkappa = 0.001\nblocking = true\n");
    cfg.run.seeds = vec![5];
    let r = run_campaign(&cfg).unwrap();
    let arm = r.arm(0.4, 5).unwrap();
    assert!(!arm.alarm_log.is_empty());
    assert!(arm.alarm_log.iter().all(|a| a.verdict == "blocked" && a.max_deviation > a.threshold));
    let alarms: u64 = arm.episodes.iter().map(|e| e.alarms).sum();
    assert_eq!(alarms as usize, arm.alarm_log.len());
}
