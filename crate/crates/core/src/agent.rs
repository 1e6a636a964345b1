//! Tabular Q-learning: dense Q-table, ε-greedy selection, one-step update.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerParams {
    /// Learning rate α.
    pub alpha: f64,
    /// Discount Γ.
    pub gamma: f64,
    /// Exploration probability of the ε-greedy policy.
    pub epsilon: f64,
}

impl Default for LearnerParams {
    fn default() -> Self {
        LearnerParams {
            alpha: 0.10,
            gamma: 0.80,
            epsilon: 0.08,
        }
    }
}

impl LearnerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("learner.alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("learner.gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!(
                "learner.epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Dense `states × actions` table, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(states: usize, actions: usize) -> Self {
        QTable {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn from_values(states: usize, actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != states * actions {
            return Err(Error::Protocol(format!(
                "expected {} values for a {states}x{actions} table, got {}",
                states * actions,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite Q-value {v}")));
        }
        Ok(QTable {
            states,
            actions,
            values,
        })
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    /// Overwrite a whole row (used when aggregated advice replaces it).
    pub fn set_row(&mut self, s: usize, row: &[f64]) -> Result<()> {
        if row.len() != self.actions {
            return Err(Error::Protocol(format!(
                "row of length {} for a table with {} actions",
                row.len(),
                self.actions
            )));
        }
        self.values[s * self.actions..(s + 1) * self.actions].copy_from_slice(row);
        Ok(())
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    fn check_state(&self, s: usize) -> Result<()> {
        if s >= self.states {
            return Err(Error::Precondition(format!(
                "state {s} out of range for {} states",
                self.states
            )));
        }
        Ok(())
    }

    /// `state,action,q` CSV with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,q\n");
        for s in 0..self.states {
            for a in 0..self.actions {
                let _ = writeln!(out, "{s},{a},{}", self.get(s, a));
            }
        }
        out
    }

    /// Parse the format written by [`to_csv`](Self::to_csv). Rows may come
    /// in any order but every `(state, action)` pair must appear exactly once.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| Error::parse("Q-table CSV", e))?;
        if headers.iter().collect::<Vec<_>>() != ["state", "action", "q"] {
            return Err(Error::parse("Q-table CSV", "header must be state,action,q"));
        }
        let mut rows = Vec::new();
        let (mut states, mut actions) = (0usize, 0usize);
        for record in reader.records() {
            let record = record.map_err(|e| Error::parse("Q-table CSV", e))?;
            if record.len() != 3 {
                return Err(Error::parse("Q-table CSV", "expected 3 fields"));
            }
            let s: usize = record[0].trim().parse().map_err(|e| Error::parse("Q-table CSV", e))?;
            let a: usize = record[1].trim().parse().map_err(|e| Error::parse("Q-table CSV", e))?;
            let q: f64 = record[2].trim().parse().map_err(|e| Error::parse("Q-table CSV", e))?;
            if !q.is_finite() {
                return Err(Error::parse("Q-table CSV", format!("non-finite value {q}")));
            }
            states = states.max(s.checked_add(1).ok_or_else(|| Error::parse("Q-table CSV", "state overflow"))?);
            actions = actions.max(a.checked_add(1).ok_or_else(|| Error::parse("Q-table CSV", "action overflow"))?);
            rows.push((s, a, q));
        }
        let cells = states
            .checked_mul(actions)
            .filter(|&n| n == rows.len())
            .ok_or_else(|| Error::parse("Q-table CSV", "rows do not form a dense table"))?;
        let mut values = vec![0.0; cells];
        let mut seen = vec![false; cells];
        for (s, a, q) in rows {
            let idx = s * actions + a;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(Error::parse("Q-table CSV", format!("duplicate entry ({s}, {a})")));
            }
            values[idx] = q;
        }
        QTable::from_values(states, actions, values)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy action for state `s`.
pub fn select_action<R: Rng + ?Sized>(q: &QTable, s: usize, params: &LearnerParams, rng: &mut R) -> usize {
    if params.epsilon > 0.0 && rng.random::<f64>() < params.epsilon {
        rng.random_range(0..q.action_count())
    } else {
        q.argmax(s)
    }
}

/// `Q(s,a) ← (1−α)Q(s,a) + α[r + Γ·max_a' Q(s',a')]`. A terminal `s_next`
/// (passed as `None`) bootstraps from 0. Returns the new entry.
pub fn q_update(
    q: &mut QTable,
    s: usize,
    a: usize,
    reward: f64,
    s_next: Option<usize>,
    params: &LearnerParams,
) -> Result<f64> {
    if !reward.is_finite() {
        return Err(Error::Numeric(format!("non-finite reward {reward}")));
    }
    q.check_state(s)?;
    if a >= q.action_count() {
        return Err(Error::Precondition(format!("action {a} out of range")));
    }
    let future = match s_next {
        Some(next) => {
            q.check_state(next)?;
            q.max(next)
        }
        None => 0.0,
    };
    let target = reward + params.gamma * future;
    let updated = (1.0 - params.alpha) * q.get(s, a) + params.alpha * target;
    q.set(s, a, updated);
    Ok(updated)
}
