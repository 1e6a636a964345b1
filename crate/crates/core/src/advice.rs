//! Neighbor-zone Q-value advising: who asks, who answers, what gets sent,
//! and how the advisee folds the answers into its own row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Cell;
use crate::error::{Error, Result};

/// Ask/answer probability as a function of how often the agent visited the
/// state being discussed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbabilityRule {
    /// `1/√(1+n)`.
    InverseSqrt,
    /// `1/(1+n)`.
    Inverse,
    /// Always 1.
    Always,
}

impl ProbabilityRule {
    pub fn probability(self, visits: u32) -> f64 {
        match self {
            ProbabilityRule::InverseSqrt => 1.0 / (1.0 + f64::from(visits)).sqrt(),
            ProbabilityRule::Inverse => 1.0 / (1.0 + f64::from(visits)),
            ProbabilityRule::Always => 1.0,
        }
    }
}

/// Default ask probability: `1/√(1 + visit_count)`.
pub fn request_probability(visit_count: u32) -> f64 {
    ProbabilityRule::InverseSqrt.probability(visit_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdviceParams {
    pub enabled: bool,
    /// Weight `w` kept on the advisee's own estimate.
    pub weight: f64,
    /// Chebyshev radius of the neighbor zone.
    pub zone_radius: usize,
    pub ask_budget: u64,
    pub give_budget: u64,
    pub attacker_budget: u64,
    pub ask_rule: ProbabilityRule,
    pub give_rule: ProbabilityRule,
}

impl Default for AdviceParams {
    fn default() -> Self {
        AdviceParams {
            enabled: true,
            weight: 0.90,
            zone_radius: 2,
            ask_budget: 100_000,
            give_budget: 100_000,
            attacker_budget: 10_000,
            ask_rule: ProbabilityRule::InverseSqrt,
            give_rule: ProbabilityRule::InverseSqrt,
        }
    }
}

impl AdviceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::Config(format!("advice.weight must lie in [0, 1], got {}", self.weight)));
        }
        Ok(())
    }
}

/// Remaining exchanges. One unit = one whole state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdviceBudget {
    pub remaining_ask: u64,
    pub remaining_give: u64,
}

impl AdviceBudget {
    pub fn new(ask: u64, give: u64) -> Self {
        AdviceBudget {
            remaining_ask: ask,
            remaining_give: give,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdviceRecord {
    pub advisor: usize,
    pub state: usize,
    pub values: Vec<f64>,
    pub malicious: bool,
    pub episode: usize,
    pub step: usize,
}

/// `w·own(a) + (1−w)·mean_k advice_k(a)`; `own` unchanged when there is no
/// advice or `w = 1`.
pub fn aggregate(own: &[f64], advice: &[AdviceRecord], weight: f64) -> Result<Vec<f64>> {
    if let Some(bad) = advice.iter().find(|r| r.values.len() != own.len()) {
        return Err(Error::Protocol(format!(
            "advice from agent {} has {} values, expected {}",
            bad.advisor,
            bad.values.len(),
            own.len()
        )));
    }
    if advice.is_empty() || weight == 1.0 {
        return Ok(own.to_vec());
    }
    let k = advice.len() as f64;
    Ok(own
        .iter()
        .enumerate()
        .map(|(a, &q)| {
            let mean = advice.iter().map(|r| r.values[a]).sum::<f64>() / k;
            weight * q + (1.0 - weight) * mean
        })
        .collect())
}

/// What an advisor sends back for a request. Implemented by the simulation
/// so benign and compromised advisors can answer differently.
pub trait Respond {
    /// Produce the advice vector of `advisor` for `state`; the `bool` marks
    /// malicious output.
    fn respond(&mut self, advisor: usize, advisee: usize, state: usize) -> Result<(Vec<f64>, bool)>;
}

/// View of the population needed to route one advice request.
pub struct Neighborhood<'a> {
    pub positions: &'a [Cell],
    /// Per-agent visit counts of the requested state.
    pub visits: &'a [u32],
}

/// Route one advice request from `advisee` about `state`.
///
/// The advisee asks with its own ask probability (and only while its ask
/// budget lasts). Every other agent inside the Chebyshev zone then answers
/// with its give probability if it still has give budget. Each answer costs
/// one unit of both budgets. `coins[k]` is agent k's own advice stream:
/// the advisee draws its ask coin from its entry, each advisor its answer
/// coin from its own.
#[allow(clippy::too_many_arguments)]
pub fn gather_advice<R: Rng, S: Respond>(
    advisee: usize,
    state: usize,
    hood: &Neighborhood<'_>,
    params: &AdviceParams,
    budgets: &mut [AdviceBudget],
    coins: &mut [R],
    responder: &mut S,
    (episode, step): (usize, usize),
) -> Result<Vec<AdviceRecord>> {
    let mut records = Vec::new();
    if params.zone_radius == 0 || budgets[advisee].remaining_ask == 0 {
        return Ok(records);
    }
    if coins[advisee].random::<f64>() >= params.ask_rule.probability(hood.visits[advisee]) {
        return Ok(records);
    }
    let here = hood.positions[advisee];
    for advisor in 0..hood.positions.len() {
        if advisor == advisee || here.chebyshev(hood.positions[advisor]) > params.zone_radius {
            continue;
        }
        if budgets[advisee].remaining_ask == 0 {
            break;
        }
        if budgets[advisor].remaining_give == 0 {
            continue;
        }
        let coin = coins[advisor].random::<f64>();
        if coin >= params.give_rule.probability(hood.visits[advisor]) {
            continue;
        }
        let (values, malicious) = responder.respond(advisor, advisee, state)?;
        budgets[advisee].remaining_ask -= 1;
        budgets[advisor].remaining_give -= 1;
        records.push(AdviceRecord {
            advisor,
            state,
            values,
            malicious,
            episode,
            step,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::BoundedLaplace;
    use crate::rng::{substream, SimRng, Stream};
    use proptest::prelude::*;

    fn record(values: Vec<f64>) -> AdviceRecord {
        AdviceRecord {
            advisor: 1,
            state: 0,
            values,
            malicious: false,
            episode: 0,
            step: 0,
        }
    }

    #[test]
    fn request_probability_values() {
        assert_eq!(request_probability(0), 1.0);
        assert_eq!(request_probability(3), 0.5);
        let mut prev = f64::INFINITY;
        for n in 0..=100 {
            let p = request_probability(n);
            assert!(p <= prev);
            prev = p;
        }
    }

    #[test]
    fn aggregate_examples() {
        let own = [2.0, 2.0];
        let out = aggregate(&own, &[record(vec![4.0, 0.0])], 0.9).unwrap();
        let oracle: Vec<f64> = own
            .iter()
            .zip([4.0, 0.0])
            .map(|(o, a)| 0.9 * o + (1.0 - 0.9) * a)
            .collect();
        assert_eq!(out, oracle);
        assert!((out[0] - 2.2).abs() < 1e-12 && (out[1] - 1.8).abs() < 1e-12);

        assert_eq!(aggregate(&own, &[record(vec![4.0, 0.0])], 1.0).unwrap(), own);
        assert_eq!(aggregate(&own, &[], 0.3).unwrap(), own);
        assert!(matches!(
            aggregate(&own, &[record(vec![1.0])], 0.5),
            Err(Error::Protocol(_))
        ));
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            own in proptest::collection::vec(-2.0f64..10.0, 5),
            advice in proptest::collection::vec(proptest::collection::vec(-2.0f64..10.0, 5), 1..6),
            w in 0.0f64..1.0,
        ) {
            let recs: Vec<_> = advice.iter().cloned().map(record).collect();
            let mut rev = recs.clone();
            rev.reverse();
            let a = aggregate(&own, &recs, w).unwrap();
            let b = aggregate(&own, &rev, w).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn aggregate_is_linear_in_own(
            own in proptest::collection::vec(-2.0f64..10.0, 5),
            adv in proptest::collection::vec(-2.0f64..10.0, 5),
            w in 0.0f64..1.0,
            k in -3.0f64..3.0,
        ) {
            let recs = [record(adv)];
            let base = aggregate(&own, &recs, w).unwrap();
            let shifted: Vec<f64> = own.iter().map(|v| v + k).collect();
            let moved = aggregate(&shifted, &recs, w).unwrap();
            for (m, b) in moved.iter().zip(&base) {
                prop_assert!((m - b - w * k).abs() < 1e-9);
            }
        }
    }

    struct Benign {
        rows: Vec<Vec<f64>>,
        mech: BoundedLaplace,
        rngs: Vec<SimRng>,
    }

    impl Respond for Benign {
        fn respond(&mut self, advisor: usize, _: usize, _: usize) -> Result<(Vec<f64>, bool)> {
            let v = self.mech.perturb_vector(&self.rows[advisor], &mut self.rngs[advisor])?;
            Ok((v, false))
        }
    }

    fn setup(n: usize) -> (Vec<Cell>, Vec<u32>, Vec<SimRng>, Benign) {
        let positions = (0..n).map(|i| Cell::new(2, 1 + i % 3)).collect();
        let visits = vec![0; n];
        let coins = (0..n).map(|i| substream(1, Stream::Advice(i))).collect();
        let responder = Benign {
            rows: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]; n],
            mech: BoundedLaplace::new(-1.5, 10.0, 1.15).unwrap(),
            rngs: (0..n).map(|i| substream(2, Stream::Advice(i))).collect(),
        };
        (positions, visits, coins, responder)
    }

    #[test]
    fn three_forced_benign_responses() {
        let (positions, visits, mut coins, mut responder) = setup(4);
        let params = AdviceParams {
            ask_rule: ProbabilityRule::Always,
            give_rule: ProbabilityRule::Always,
            ..Default::default()
        };
        let mut budgets = vec![AdviceBudget::new(10, 10); 4];
        let hood = Neighborhood { positions: &positions, visits: &visits };
        let recs = gather_advice(0, 7, &hood, &params, &mut budgets, &mut coins, &mut responder, (0, 0)).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| !r.malicious && r.values.iter().all(|v| (-1.5..=10.0).contains(v))));
        assert_eq!(budgets[0].remaining_ask, 7);
        assert!(budgets[1..].iter().all(|b| b.remaining_give == 9));
    }

    #[test]
    fn empty_zone_or_budget_gives_nothing() {
        let (positions, visits, mut coins, mut responder) = setup(4);
        let hood = Neighborhood { positions: &positions, visits: &visits };
        let forced = AdviceParams {
            ask_rule: ProbabilityRule::Always,
            give_rule: ProbabilityRule::Always,
            ..Default::default()
        };

        let zero_zone = AdviceParams { zone_radius: 0, ..forced };
        let mut budgets = vec![AdviceBudget::new(10, 10); 4];
        let recs = gather_advice(0, 0, &hood, &zero_zone, &mut budgets, &mut coins, &mut responder, (0, 0)).unwrap();
        assert!(recs.is_empty());

        let mut budgets = vec![AdviceBudget::new(0, 0); 4];
        let recs = gather_advice(0, 0, &hood, &forced, &mut budgets, &mut coins, &mut responder, (0, 0)).unwrap();
        assert!(recs.is_empty());

        // advisee can ask, but nobody can give
        let mut budgets = vec![AdviceBudget::new(10, 0); 4];
        let recs = gather_advice(0, 0, &hood, &forced, &mut budgets, &mut coins, &mut responder, (0, 0)).unwrap();
        assert!(recs.is_empty());
    }

    #[test]
    fn budgets_are_never_exceeded() {
        let (positions, visits, mut coins, mut responder) = setup(6);
        let params = AdviceParams {
            ask_rule: ProbabilityRule::Always,
            give_rule: ProbabilityRule::Always,
            ..Default::default()
        };
        let mut budgets = vec![AdviceBudget::new(5, 3); 6];
        let hood = Neighborhood { positions: &positions, visits: &visits };
        let mut received = [0u64; 6];
        let mut given = [0u64; 6];
        for round in 0..50 {
            let advisee = round % 6;
            for r in gather_advice(advisee, 0, &hood, &params, &mut budgets, &mut coins, &mut responder, (0, round)).unwrap() {
                received[advisee] += 1;
                given[r.advisor] += 1;
            }
        }
        assert!(received.iter().all(|&n| n <= 5));
        assert!(given.iter().all(|&n| n <= 3));
    }
}
