//! Grid-world Markov game: N agents race to a fixed goal cell while dynamic
//! obstacles wander around and static freeway cells hand out small bonuses.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cell as `(row, column)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }

    /// Chebyshev (king-move) distance.
    pub fn chebyshev(self, other: Cell) -> usize {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] =
        [Action::Up, Action::Down, Action::Left, Action::Right, Action::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSchedule {
    pub goal: f64,
    pub freeway: f64,
    pub obstacle: f64,
    pub wall: f64,
}

impl Default for RewardSchedule {
    fn default() -> Self {
        RewardSchedule {
            goal: 10.0,
            freeway: 0.5,
            obstacle: -1.5,
            wall: -0.5,
        }
    }
}

impl RewardSchedule {
    pub fn validate(&self) -> Result<()> {
        let all = [self.goal, self.freeway, self.obstacle, self.wall];
        if all.iter().any(|r| !r.is_finite()) {
            return Err(Error::Config("rewards must be finite".into()));
        }
        if self.goal <= self.freeway {
            return Err(Error::Config(format!(
                "goal reward ({}) must exceed freeway reward ({})",
                self.goal, self.freeway
            )));
        }
        Ok(())
    }

    /// Smallest and largest reward a single transition can produce.
    pub fn range(&self) -> (f64, f64) {
        let all = [self.goal, self.freeway, self.obstacle, self.wall, 0.0];
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Static description of a world; everything needed to build one.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub height: usize,
    pub width: usize,
    pub agents: usize,
    pub obstacles: usize,
    pub freeways: usize,
    pub goal: Cell,
    pub step_limit: usize,
    pub rewards: RewardSchedule,
}

impl WorldSpec {
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("grid must be at least 1x1".into()));
        }
        if self.agents == 0 {
            return Err(Error::Config("at least one agent is required".into()));
        }
        if self.step_limit == 0 {
            return Err(Error::Config("step_limit must be positive".into()));
        }
        if self.goal.x >= self.height || self.goal.y >= self.width {
            return Err(Error::Config(format!(
                "goal ({}, {}) lies outside the {}x{} grid",
                self.goal.x, self.goal.y, self.height, self.width
            )));
        }
        // goal + obstacles + agents must all fit on distinct cells at reset
        if 1 + self.obstacles + self.agents > self.cells() {
            return Err(Error::Config(format!(
                "{}x{} grid cannot hold the goal, {} obstacles and {} agents on distinct cells",
                self.height, self.width, self.obstacles, self.agents
            )));
        }
        if self.freeways + 1 > self.cells() {
            return Err(Error::Config("too many freeway cells for the grid".into()));
        }
        self.rewards.validate()
    }
}

/// Result of moving one agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: Cell,
    pub reward: f64,
    /// The agent reached the goal.
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Goal { agent: usize },
    StepLimit,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: WorldSpec,
    freeway_mask: Vec<bool>,
    freeways: Vec<Cell>,
    obstacles: Vec<Cell>,
    agents: Vec<Cell>,
    steps: usize,
    ended: Option<EpisodeEnd>,
}

impl GridWorld {
    /// Build a world and place freeways (fixed for the world's lifetime),
    /// then perform an initial [`reset`](Self::reset).
    pub fn new<R: Rng + ?Sized>(spec: WorldSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let goal_id = spec.goal.x * spec.width + spec.goal.y;
        let mut candidates: Vec<usize> = (0..spec.cells()).filter(|&c| c != goal_id).collect();
        candidates.shuffle(rng);
        let mut freeway_mask = vec![false; spec.cells()];
        let mut freeways = Vec::with_capacity(spec.freeways);
        for &c in candidates.iter().take(spec.freeways) {
            freeway_mask[c] = true;
            freeways.push(Cell::new(c / spec.width, c % spec.width));
        }
        let mut world = GridWorld {
            freeway_mask,
            freeways,
            obstacles: Vec::new(),
            agents: Vec::new(),
            steps: 0,
            ended: None,
            spec,
        };
        world.reset(rng)?;
        Ok(world)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn goal(&self) -> Cell {
        self.spec.goal
    }

    pub fn obstacles(&self) -> &[Cell] {
        &self.obstacles
    }

    pub fn freeways(&self) -> &[Cell] {
        &self.freeways
    }

    pub fn agent_positions(&self) -> &[Cell] {
        &self.agents
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn ended(&self) -> Option<EpisodeEnd> {
        self.ended
    }

    pub fn state_count(&self) -> usize {
        self.spec.cells()
    }

    pub fn is_freeway(&self, cell: Cell) -> bool {
        self.freeway_mask[self.cell_id(cell)]
    }

    pub fn is_obstacle(&self, cell: Cell) -> bool {
        self.obstacles.contains(&cell)
    }

    fn cell_id(&self, cell: Cell) -> usize {
        cell.x * self.spec.width + cell.y
    }

    /// Re-randomize agents and obstacles onto distinct non-goal cells and
    /// zero the step counter. Goal and freeways stay where they are.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.spec.validate()?;
        let goal_id = self.cell_id(self.spec.goal);
        let needed = self.spec.obstacles + self.spec.agents;
        let mut free: Vec<usize> = (0..self.spec.cells()).filter(|&c| c != goal_id).collect();
        let (picked, _) = free.partial_shuffle(rng, needed);
        let w = self.spec.width;
        let to_cell = |c: &usize| Cell::new(c / w, c % w);
        self.obstacles = picked[..self.spec.obstacles].iter().map(to_cell).collect();
        self.agents = picked[self.spec.obstacles..].iter().map(to_cell).collect();
        self.steps = 0;
        self.ended = None;
        Ok(())
    }

    /// Row-major state id of `agent`'s cell.
    pub fn encode_state(&self, agent: usize) -> Result<usize> {
        let cell = self.position(agent)?;
        Ok(encode_cell(cell, self.spec.width))
    }

    pub fn position(&self, agent: usize) -> Result<Cell> {
        self.agents.get(agent).copied().ok_or_else(|| {
            Error::Config(format!(
                "agent id {agent} out of range (world has {} agents)",
                self.agents.len()
            ))
        })
    }

    /// Move one agent. Rewards follow goal > obstacle > freeway > wall-bump.
    /// Reaching the goal ends the episode immediately.
    pub fn step_agent(&mut self, agent: usize, action: Action) -> Result<StepOutcome> {
        if self.ended.is_some() {
            return Err(Error::Precondition("episode already ended".into()));
        }
        let from = self.position(agent)?;
        let rewards = self.spec.rewards;
        let (dx, dy) = action.delta();
        let target = offset(from, dx, dy, self.spec.height, self.spec.width);
        let (next, reward) = match target {
            None => (from, rewards.wall),
            Some(cell) if cell == from => (from, 0.0),
            Some(cell) if cell == self.spec.goal => (cell, rewards.goal),
            Some(cell) if self.is_obstacle(cell) => (cell, rewards.obstacle),
            Some(cell) if self.is_freeway(cell) => (cell, rewards.freeway),
            Some(cell) => (cell, 0.0),
        };
        self.agents[agent] = next;
        let done = next == self.spec.goal;
        if done {
            self.ended = Some(EpisodeEnd::Goal { agent });
        }
        Ok(StepOutcome { next, reward, done })
    }

    /// Close a round after every agent moved: obstacles take a random
    /// one-cell move (or stay), never onto the goal or off the grid, and the
    /// step counter advances. Returns the episode end, if any.
    pub fn end_round<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<EpisodeEnd> {
        self.steps += 1;
        if self.ended.is_some() {
            return self.ended;
        }
        let (h, w, goal) = (self.spec.height, self.spec.width, self.spec.goal);
        for obstacle in &mut self.obstacles {
            let action = Action::ALL[rng.random_range(0..Action::COUNT)];
            let (dx, dy) = action.delta();
            if let Some(cell) = offset(*obstacle, dx, dy, h, w) {
                if cell != goal {
                    *obstacle = cell;
                }
            }
        }
        if self.steps >= self.spec.step_limit {
            self.ended = Some(EpisodeEnd::StepLimit);
        }
        self.ended
    }
}

pub fn encode_cell(cell: Cell, width: usize) -> usize {
    cell.x * width + cell.y
}

pub fn decode_state(state: usize, width: usize) -> Cell {
    Cell::new(state / width, state % width)
}

fn offset(cell: Cell, dx: isize, dy: isize, h: usize, w: usize) -> Option<Cell> {
    let x = cell.x.checked_add_signed(dx)?;
    let y = cell.y.checked_add_signed(dy)?;
    (x < h && y < w).then_some(Cell::new(x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Stream};
    use std::collections::HashSet;

    fn spec(h: usize, w: usize, agents: usize, obstacles: usize) -> WorldSpec {
        WorldSpec {
            height: h,
            width: w,
            agents,
            obstacles,
            freeways: 0,
            goal: Cell::new(h - 1, w - 1),
            step_limit: 1000,
            rewards: RewardSchedule::default(),
        }
    }

    fn world(spec: WorldSpec) -> GridWorld {
        GridWorld::new(spec, &mut substream(1, Stream::Env)).unwrap()
    }

    #[test]
    fn reaching_goal_pays_and_ends() {
        let mut w = world(spec(5, 5, 1, 0));
        w.agents[0] = Cell::new(4, 3);
        let out = w.step_agent(0, Action::Right).unwrap();
        assert_eq!(out.reward, 10.0);
        assert!(out.done);
        assert_eq!(w.ended(), Some(EpisodeEnd::Goal { agent: 0 }));
        assert!(w.step_agent(0, Action::Left).is_err());
    }

    #[test]
    fn wall_bump_keeps_position() {
        let mut w = world(spec(5, 5, 1, 0));
        w.agents[0] = Cell::new(0, 0);
        let out = w.step_agent(0, Action::Up).unwrap();
        assert_eq!(out.next, Cell::new(0, 0));
        assert_eq!(out.reward, -0.5);
        assert!(!out.done);
        let out = w.step_agent(0, Action::Left).unwrap();
        assert_eq!(out.reward, -0.5);
    }

    #[test]
    fn freeway_and_obstacle_rewards() {
        let mut w = world(spec(5, 5, 1, 1));
        w.freeway_mask = vec![false; 25];
        w.freeway_mask[encode_cell(Cell::new(2, 3), 5)] = true;
        w.freeway_mask[encode_cell(Cell::new(2, 2), 5)] = true;
        w.obstacles = vec![Cell::new(4, 0)];
        w.agents[0] = Cell::new(2, 2);
        let out = w.step_agent(0, Action::Right).unwrap();
        assert_eq!(out.next, Cell::new(2, 3));
        assert_eq!(out.reward, 0.5);
        assert!(!out.done);

        // obstacle beats freeway
        w.obstacles = vec![Cell::new(2, 2)];
        let out = w.step_agent(0, Action::Left).unwrap();
        assert_eq!(out.next, Cell::new(2, 2));
        assert_eq!(out.reward, -1.5);
    }

    #[test]
    fn stay_earns_nothing() {
        let mut w = world(spec(5, 5, 1, 0));
        w.agents[0] = Cell::new(2, 2);
        let out = w.step_agent(0, Action::Stay).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.next, Cell::new(2, 2));
    }

    #[test]
    fn invalid_agent_is_config_error() {
        let mut w = world(spec(5, 5, 2, 0));
        assert!(matches!(w.step_agent(7, Action::Up), Err(Error::Config(_))));
        assert!(matches!(w.encode_state(2), Err(Error::Config(_))));
    }

    #[test]
    fn reset_places_entities_on_distinct_legal_cells() {
        let w = world(spec(5, 5, 5, 1));
        let mut seen = HashSet::new();
        seen.insert(w.goal());
        for &c in w.obstacles().iter().chain(w.agent_positions()) {
            assert!(c.x < 5 && c.y < 5);
            assert!(seen.insert(c), "cell {c:?} used twice");
        }
        assert_eq!(seen.len(), 7);
    }

    #[test]
    fn reset_is_deterministic() {
        let a = world(spec(10, 10, 10, 3));
        let b = world(spec(10, 10, 10, 3));
        assert_eq!(a.agent_positions(), b.agent_positions());
        assert_eq!(a.obstacles(), b.obstacles());
        assert_eq!(a.freeways(), b.freeways());
    }

    #[test]
    fn tiny_grid_is_rejected() {
        let s = WorldSpec {
            goal: Cell::new(0, 0),
            ..spec(1, 1, 2, 0)
        };
        assert!(matches!(
            GridWorld::new(s, &mut substream(0, Stream::Env)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn state_encoding() {
        assert_eq!(encode_cell(Cell::new(0, 0), 5), 0);
        assert_eq!(encode_cell(Cell::new(4, 4), 5), 24);
        assert_eq!(encode_cell(Cell::new(2, 3), 10), 23);
        for (h, w) in [(5, 5), (10, 10), (3, 7)] {
            let mut seen = vec![false; h * w];
            for x in 0..h {
                for y in 0..w {
                    let id = encode_cell(Cell::new(x, y), w);
                    assert!(!seen[id]);
                    seen[id] = true;
                    assert_eq!(decode_state(id, w), Cell::new(x, y));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn obstacles_never_reach_goal_and_limit_ends_episode() {
        let mut s = spec(3, 3, 1, 4);
        s.step_limit = 500;
        s.goal = Cell::new(1, 1);
        let mut w = world(s);
        let mut rng = substream(9, Stream::Env);
        w.agents[0] = Cell::new(0, 0);
        let mut end = None;
        while end.is_none() {
            w.step_agent(0, Action::Stay).unwrap();
            end = w.end_round(&mut rng);
            assert!(!w.obstacles().contains(&Cell::new(1, 1)));
        }
        assert_eq!(end, Some(EpisodeEnd::StepLimit));
        assert_eq!(w.steps(), 500);
    }

    #[test]
    fn goal_reward_is_exclusive_source() {
        let mut s = spec(5, 5, 1, 0);
        s.freeways = 24;
        let mut w = world(s);
        w.agents[0] = Cell::new(3, 4);
        let out = w.step_agent(0, Action::Down).unwrap();
        assert_eq!(out.reward, 10.0);
    }
}
