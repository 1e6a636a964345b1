//! One run: a world, N learners, their advice channels, the attackers and
//! the per-advisee detectors, stepped episode by episode.

use rand::seq::SliceRandom;

use crate::advice::{aggregate, gather_advice, AdviceBudget, AdviceRecord, Neighborhood, Respond};
use crate::agent::{q_update, select_action, QTable};
use crate::attack::{pelpa_advice, pelpa_external, AttackMode, ProfileLadder};
use crate::config::ExperimentConfig;
use crate::detector::{check, ReferenceTracker};
use crate::env::{Action, EpisodeEnd, GridWorld};
use crate::error::{Error, Result};
use crate::metrics::{delta_q, DoneBy, EpisodeMetrics};
use crate::privacy::BoundedLaplace;
use crate::rng::{substream, SimRng, Stream};

/// The first `⌈ratio·N⌉` agents of a seeded shuffle. Sets are nested: the
/// attackers at a lower ratio are a subset of those at a higher one.
pub fn select_attackers(root_seed: u64, agents: usize, count: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..agents).collect();
    ids.shuffle(&mut substream(root_seed, Stream::AttackerSelection));
    let mut picked = ids[..count.min(agents)].to_vec();
    picked.sort_unstable();
    picked
}

/// One line of the optional advice log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdviceLogRow {
    pub episode: usize,
    pub step: usize,
    pub advisee: usize,
    pub advisor: usize,
    pub state: usize,
    pub action: usize,
    pub value: f64,
    pub malicious: bool,
}

/// One line of the optional alarm log.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AlarmLogRow {
    pub episode: usize,
    pub step: usize,
    pub advisee: usize,
    pub advisor: usize,
    pub state: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub verdict: String,
}

/// How a run treats privacy and attacks.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub root_seed: u64,
    pub attackers: Vec<usize>,
    /// Perturb shared values with the bounded Laplace mechanism.
    pub privacy: bool,
    /// Reference tables for ΔQ̄, one per agent.
    pub reference: Option<Vec<QTable>>,
}

/// Answers advice requests on behalf of every advisor.
struct Responder<'a> {
    tables: &'a [QTable],
    malicious: &'a [bool],
    privacy: bool,
    mech: &'a BoundedLaplace,
    ladder: Option<&'a ProfileLadder>,
    cfg: &'a ExperimentConfig,
    privacy_rngs: &'a mut [SimRng],
    attack_rngs: &'a mut [SimRng],
    gammas: Vec<u32>,
}

impl Responder<'_> {
    fn benign(&mut self, advisor: usize, state: usize) -> Result<Vec<f64>> {
        let row = self.tables[advisor].row(state);
        if self.privacy {
            self.mech.perturb_vector(row, &mut self.privacy_rngs[advisor])
        } else {
            Ok(row.iter().map(|&q| self.mech.clamp(q)).collect())
        }
    }
}

impl Respond for Responder<'_> {
    fn respond(&mut self, advisor: usize, advisee: usize, state: usize) -> Result<(Vec<f64>, bool)> {
        let ladder = match self.ladder {
            Some(l) if self.malicious[advisor] => l,
            _ => return Ok((self.benign(advisor, state)?, false)),
        };
        let attack = &self.cfg.attack;
        let advisee_row = (!attack.blind).then(|| self.tables[advisee].row(state));
        let out = match attack.mode {
            AttackMode::Internal => pelpa_advice(
                self.tables[advisor].row(state),
                advisee_row,
                ladder,
                attack.sampler,
                self.mech,
                &mut self.attack_rngs[advisor],
            )?,
            AttackMode::External => {
                let benign = self.benign(advisor, state)?;
                pelpa_external(&benign, advisee_row, ladder, attack.sampler, self.mech, &mut self.attack_rngs[advisor])?
            }
        };
        self.gammas.push(out.gamma);
        Ok((out.values, true))
    }
}

/// All mutable state of one run.
pub struct Simulation {
    cfg: ExperimentConfig,
    setup: RunSetup,
    world: GridWorld,
    tables: Vec<QTable>,
    visits: Vec<Vec<u32>>,
    budgets: Vec<AdviceBudget>,
    trackers: Vec<ReferenceTracker>,
    malicious: Vec<bool>,
    mech: BoundedLaplace,
    ladder: Option<ProfileLadder>,
    env_rng: SimRng,
    policy_rngs: Vec<SimRng>,
    advice_rngs: Vec<SimRng>,
    privacy_rngs: Vec<SimRng>,
    attack_rngs: Vec<SimRng>,
    episode: usize,
    advice_log: Option<Vec<AdviceLogRow>>,
    alarm_log: Option<Vec<AlarmLogRow>>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, setup: RunSetup) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.world_spec();
        let n = spec.agents;
        let root = setup.root_seed;
        let mut env_rng = substream(root, Stream::Env);
        let world = GridWorld::new(spec, &mut env_rng)?;
        let states = world.state_count();
        if let Some(reference) = &setup.reference {
            if reference.len() != n
                || reference
                    .iter()
                    .any(|t| t.state_count() != states || t.action_count() != Action::COUNT)
            {
                return Err(Error::Precondition("reference tables do not match the world".into()));
            }
        }
        let mut malicious = vec![false; n];
        for &a in &setup.attackers {
            *malicious
                .get_mut(a)
                .ok_or_else(|| Error::Config(format!("attacker id {a} out of range")))? = true;
        }
        let mech = cfg.privacy.mechanism(cfg.learner.alpha)?;
        let ladder = if setup.attackers.is_empty() {
            None
        } else {
            Some(ProfileLadder::new(cfg.attack.tau_gamma, mech.scale(), cfg.attack.theta)?)
        };
        let budgets = malicious
            .iter()
            .map(|&m| {
                let give = if m { cfg.advice.attacker_budget } else { cfg.advice.give_budget };
                AdviceBudget::new(cfg.advice.ask_budget, give)
            })
            .collect();
        let streams = |f: fn(usize) -> Stream| (0..n).map(|i| substream(root, f(i))).collect::<Vec<_>>();
        Ok(Simulation {
            tables: vec![QTable::zeros(states, Action::COUNT); n],
            visits: vec![vec![0; states]; n],
            budgets,
            trackers: vec![ReferenceTracker::new(states, Action::COUNT); n],
            malicious,
            mech,
            ladder,
            env_rng,
            policy_rngs: streams(Stream::Policy),
            advice_rngs: streams(Stream::Advice),
            privacy_rngs: streams(Stream::Privacy),
            attack_rngs: streams(Stream::Attack),
            episode: 0,
            advice_log: cfg.run.log_advice.then(Vec::new),
            alarm_log: cfg.run.log_alarms.then(Vec::new),
            world,
            cfg: cfg.clone(),
            setup,
        })
    }

    pub fn tables(&self) -> &[QTable] {
        &self.tables
    }

    pub fn into_tables(self) -> Vec<QTable> {
        self.tables
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }

    pub fn budgets(&self) -> &[AdviceBudget] {
        &self.budgets
    }

    pub fn take_advice_log(&mut self) -> Vec<AdviceLogRow> {
        self.advice_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn take_alarm_log(&mut self) -> Vec<AlarmLogRow> {
        self.alarm_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Mean ΔQ̄ over agents against the reference tables.
    pub fn delta_q(&self) -> Result<f64> {
        match &self.setup.reference {
            None => Ok(f64::NAN),
            Some(reference) => {
                let mut sum = 0.0;
                for (t, r) in self.tables.iter().zip(reference) {
                    sum += delta_q(t, r)?;
                }
                Ok(sum / self.tables.len() as f64)
            }
        }
    }

    /// Play one episode. Errors carry the episode index.
    pub fn run_episode(&mut self) -> Result<EpisodeMetrics> {
        let episode = self.episode;
        let out = self.episode_inner(episode).map_err(|e| Error::Episode {
            episode,
            source: Box::new(e),
        })?;
        self.episode += 1;
        Ok(out)
    }

    // `i` indexes the world, the tables and several per-agent vectors at once
    #[allow(clippy::needless_range_loop)]
    fn episode_inner(&mut self, episode: usize) -> Result<EpisodeMetrics> {
        let n = self.tables.len();
        let mut rewards = vec![0.0; n];
        let mut alarms = 0u64;
        let mut gamma_samples = Vec::new();
        let dp = self.setup.privacy;
        let end = loop {
            let step = self.world.steps();
            let mut goal_reached = false;
            for i in 0..n {
                let s = self.world.encode_state(i)?;
                if self.cfg.advice.enabled {
                    let (records, gammas) = self.exchange(i, s, (episode, step))?;
                    gamma_samples.extend(gammas);
                    let mut kept = Vec::with_capacity(records.len());
                    for r in records {
                        let verdict = if self.cfg.detector.enabled {
                            Some(check(&r.values, s, &mut self.trackers[i], &self.cfg.detector, dp)?)
                        } else {
                            None
                        };
                        let alarm = verdict.is_some_and(|v| v.alarm);
                        if alarm {
                            alarms += 1;
                        }
                        if let (Some(log), Some(v)) = (&mut self.alarm_log, verdict) {
                            if v.alarm {
                                log.push(AlarmLogRow {
                                    episode,
                                    step,
                                    advisee: i,
                                    advisor: r.advisor,
                                    state: s,
                                    max_deviation: v.max_deviation,
                                    threshold: v.threshold,
                                    verdict: if self.cfg.detector.blocking { "blocked" } else { "alarm" }.into(),
                                });
                            }
                        }
                        if let Some(log) = &mut self.advice_log {
                            for (a, &value) in r.values.iter().enumerate() {
                                log.push(AdviceLogRow {
                                    episode,
                                    step,
                                    advisee: i,
                                    advisor: r.advisor,
                                    state: s,
                                    action: a,
                                    value,
                                    malicious: r.malicious,
                                });
                            }
                        }
                        if !(alarm && self.cfg.detector.blocking) {
                            kept.push(r);
                        }
                    }
                    let merged = aggregate(self.tables[i].row(s), &kept, self.cfg.advice.weight)?;
                    self.tables[i].set_row(s, &merged)?;
                }
                let a = select_action(&self.tables[i], s, &self.cfg.learner, &mut self.policy_rngs[i]);
                let action = Action::from_index(a).expect("table has one column per action");
                let outcome = self.world.step_agent(i, action)?;
                let next = crate::env::encode_cell(outcome.next, self.world.spec().width);
                q_update(
                    &mut self.tables[i],
                    s,
                    a,
                    outcome.reward,
                    (!outcome.done).then_some(next),
                    &self.cfg.learner,
                )?;
                rewards[i] += outcome.reward;
                self.visits[i][s] = self.visits[i][s].saturating_add(1);
                if outcome.done {
                    goal_reached = true;
                    break;
                }
            }
            let ended = self.world.end_round(&mut self.env_rng);
            debug_assert!(!goal_reached || ended.is_some());
            if let Some(end) = ended {
                break end;
            }
        };
        let steps = self.world.steps();
        let (done_by, reward) = match end {
            EpisodeEnd::Goal { agent } => (DoneBy::Goal, rewards[agent]),
            EpisodeEnd::StepLimit => (DoneBy::StepLimit, rewards.iter().sum::<f64>() / n as f64),
        };
        let delta_q = self.delta_q()?;
        self.world.reset(&mut self.env_rng)?;
        Ok(EpisodeMetrics {
            episode,
            steps,
            done_by,
            reward,
            delta_q,
            alarms,
            gamma_samples,
        })
    }

    fn exchange(&mut self, advisee: usize, state: usize, at: (usize, usize)) -> Result<(Vec<AdviceRecord>, Vec<u32>)> {
        let visits: Vec<u32> = self.visits.iter().map(|v| v[state]).collect();
        let hood = Neighborhood {
            positions: self.world.agent_positions(),
            visits: &visits,
        };
        let mut responder = Responder {
            tables: &self.tables,
            malicious: &self.malicious,
            privacy: self.setup.privacy,
            mech: &self.mech,
            ladder: self.ladder.as_ref(),
            cfg: &self.cfg,
            privacy_rngs: &mut self.privacy_rngs,
            attack_rngs: &mut self.attack_rngs,
            gammas: Vec::new(),
        };
        let records = gather_advice(
            advisee,
            state,
            &hood,
            &self.cfg.advice,
            &mut self.budgets,
            &mut self.advice_rngs,
            &mut responder,
            at,
        )?;
        Ok((records, responder.gammas))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(episodes: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::from_toml("[run]\nscale = \"small\"\n").unwrap();
        c.run.episodes = Some(episodes);
        c
    }

    fn play(cfg: &ExperimentConfig, setup: RunSetup, episodes: usize) -> (Vec<EpisodeMetrics>, Simulation) {
        let mut sim = Simulation::new(cfg, setup).unwrap();
        let out = (0..episodes).map(|_| sim.run_episode().unwrap()).collect();
        (out, sim)
    }

    fn setup(seed: u64, attackers: Vec<usize>, privacy: bool) -> RunSetup {
        RunSetup {
            root_seed: seed,
            attackers,
            privacy,
            reference: None,
        }
    }

    #[test]
    fn attacker_sets_are_nested_and_sorted() {
        let a2 = select_attackers(7, 10, 2);
        let a4 = select_attackers(7, 10, 4);
        assert_eq!(a2.len(), 2);
        assert!(a2.windows(2).all(|w| w[0] < w[1]));
        assert!(a2.iter().all(|a| a4.contains(a)));
        assert_eq!(select_attackers(7, 10, 0), Vec::<usize>::new());
        assert_eq!(select_attackers(7, 3, 9), vec![0, 1, 2]);
    }

    #[test]
    fn same_seed_same_run() {
        let cfg = small(20);
        let (a, sa) = play(&cfg, setup(3, vec![1], true), 20);
        let (b, sb) = play(&cfg, setup(3, vec![1], true), 20);
        // no reference, so ΔQ̄ is NaN and `==` cannot be used on the metrics
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        assert_eq!(sa.tables(), sb.tables());
        let (c, _) = play(&cfg, setup(4, vec![1], true), 20);
        assert_ne!(format!("{a:?}"), format!("{c:?}"));
    }

    #[test]
    fn step_limit_episodes_report_the_limit() {
        let mut cfg = small(5);
        cfg.env.step_limit = 3;
        let (eps, _) = play(&cfg, setup(0, vec![], false), 5);
        for e in &eps {
            match e.done_by {
                DoneBy::StepLimit => assert_eq!(e.steps, 3),
                DoneBy::Goal => assert!(e.steps <= 3),
            }
        }
        assert!(eps.iter().any(|e| e.done_by == DoneBy::StepLimit));
    }

    #[test]
    fn budgets_cap_the_exchange() {
        let mut cfg = small(30);
        cfg.advice.ask_budget = 7;
        cfg.advice.give_budget = 5;
        cfg.advice.attacker_budget = 2;
        cfg.run.log_advice = true;
        let (_, mut sim) = play(&cfg, setup(1, vec![0], true), 30);
        let log = sim.take_advice_log();
        let units = |f: &dyn Fn(&AdviceLogRow) -> bool| log.iter().filter(|r| f(r)).count() / Action::COUNT;
        for i in 0..cfg.world_spec().agents {
            assert!(units(&|r| r.advisee == i) <= 7);
            let cap = if i == 0 { 2 } else { 5 };
            assert!(units(&|r| r.advisor == i) <= cap);
        }
        assert!(!log.is_empty());
    }

    #[test]
    fn attack_degrees_are_capped() {
        let cfg = small(40);
        let (eps, _) = play(&cfg, setup(2, vec![0, 1], true), 40);
        let gammas: Vec<u32> = eps.iter().flat_map(|e| e.gamma_samples.iter().copied()).collect();
        assert!(!gammas.is_empty());
        assert!(gammas.iter().all(|&g| (1..=cfg.attack.tau_gamma + 1).contains(&g)));
    }

    #[test]
    fn delta_q_needs_a_reference() {
        let cfg = small(1);
        let (eps, sim) = play(&cfg, setup(0, vec![], false), 1);
        assert!(eps[0].delta_q.is_nan());
        let reference = sim.into_tables();
        let mut with_ref = setup(0, vec![], false);
        with_ref.reference = Some(reference);
        let (eps, _) = play(&cfg, with_ref, 1);
        assert!(eps[0].delta_q.is_finite() && eps[0].delta_q >= 0.0);
    }

    #[test]
    fn mismatched_reference_is_rejected() {
        let cfg = small(1);
        let mut s = setup(0, vec![], false);
        s.reference = Some(vec![QTable::zeros(3, 5)]);
        assert!(matches!(Simulation::new(&cfg, s), Err(Error::Precondition(_))));
        assert!(matches!(Simulation::new(&cfg, setup(0, vec![99], false)), Err(Error::Config(_))));
    }
}
