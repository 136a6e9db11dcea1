//! Partially observable gridworld mazes parameterized by continuous tensors.
//!
//! An environment parameter is an `N×N×3` tensor stored row-major with the
//! channel last (flat index `(r·N + c)·3 + ch`). Channel 0 holds walls,
//! channel 1 the agent start, channel 2 the goal. The border around the
//! `N×N` interior is always wall.

use std::collections::VecDeque;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

/// Side of the egocentric observation window.
pub const OBS_WINDOW: usize = 5;
/// Number of discrete actions: turn left, turn right, forward.
pub const NUM_ACTIONS: usize = 3;
/// Channel-0 threshold at or above which a cell is a wall.
pub const WALL_THRESHOLD: f32 = 0.5;

/// Observation width: a one-hot wall/empty/goal triple per window cell plus
/// a heading one-hot.
pub const fn obs_dim() -> usize {
    OBS_WINDOW * OBS_WINDOW * 3 + 4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
}

impl Action {
    pub fn from_index(i: usize) -> Result<Action> {
        match i {
            0 => Ok(Action::Left),
            1 => Ok(Action::Right),
            2 => Ok(Action::Forward),
            _ => Err(Error::contract(format!("action index {i} out of range"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Heading {
    North = 0,
    East = 1,
    South = 2,
    West = 3,
}

impl Heading {
    const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        self as usize
    }

    fn from_index(i: usize) -> Heading {
        Heading::ALL[i % 4]
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }

    pub fn left(self) -> Heading {
        Heading::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Heading::from_index(self.index() + 1)
    }
}

pub type Cell = (usize, usize);

/// Shape of the environment family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvFamily {
    /// Interior grid side.
    pub n: usize,
    /// Largest wall count drawn by [`EnvFamily::random_param`].
    pub block_budget: usize,
    /// Episode step cap.
    pub max_steps: usize,
}

impl EnvFamily {
    /// `N_max = 8·N` and a block budget scaled from 60 walls on a 13×13 grid.
    pub fn new(n: usize) -> Result<Self> {
        let fam = EnvFamily {
            n,
            block_budget: (60 * n * n) / (13 * 13),
            max_steps: 8 * n,
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::contract(format!("grid side {} < 2", self.n)));
        }
        if self.block_budget > self.n * self.n - 2 {
            return Err(Error::contract(format!(
                "block budget {} exceeds {} free cells",
                self.block_budget,
                self.n * self.n - 2
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::contract("episode cap must be positive"));
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        self.n * self.n * 3
    }

    fn check_theta(&self, theta: &[f32]) -> Result<()> {
        if theta.len() != self.param_dim() {
            return Err(Error::contract(format!(
                "parameter of length {} for a {}×{}×3 grid",
                theta.len(),
                self.n,
                self.n
            )));
        }
        Ok(())
    }

    /// Decodes a parameter tensor into a playable maze. Total on every input
    /// of the right length; non-finite channel values never win an argmax.
    pub fn decode(&self, theta: &[f32]) -> Result<MazeEnv> {
        self.check_theta(theta)?;
        let n = self.n;
        let cells = n * n;
        let channel = |ch: usize, i: usize| {
            let v = theta[i * 3 + ch];
            if v.is_nan() {
                f32::NEG_INFINITY
            } else {
                v
            }
        };
        let argmax = |ch: usize, skip: Option<usize>| {
            let mut best: Option<(usize, f32)> = None;
            for i in (0..cells).filter(|&i| Some(i) != skip) {
                let v = channel(ch, i);
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            best.map(|(i, _)| i).unwrap_or(0)
        };
        let agent = argmax(1, None);
        let goal = argmax(2, Some(agent));
        let runner_up = argmax(1, Some(agent));
        let mut walls: Vec<bool> = (0..cells).map(|i| theta[i * 3] >= WALL_THRESHOLD).collect();
        walls[agent] = false;
        walls[goal] = false;
        let a = (agent / n, agent % n);
        let heading = Heading::ALL
            .into_iter()
            .find(|h| self.neighbor(a, *h) == Some((runner_up / n, runner_up % n)))
            .unwrap_or(Heading::East);
        MazeEnv::new(*self, walls, a, heading, (goal / n, goal % n))
    }

    /// Encodes a maze back into `{0, 0.5, 1}` channel values.
    pub fn encode(&self, env: &MazeEnv) -> Vec<f32> {
        let n = self.n;
        let mut theta = vec![0.0f32; self.param_dim()];
        for (i, &w) in env.walls.iter().enumerate() {
            if w {
                theta[i * 3] = 1.0;
            }
        }
        let (ar, ac) = env.start;
        if let Some((fr, fc)) = self.neighbor(env.start, env.start_heading) {
            theta[(fr * n + fc) * 3 + 1] = 0.5;
        }
        theta[(ar * n + ac) * 3 + 1] = 1.0;
        let (gr, gc) = env.goal;
        theta[(gr * n + gc) * 3 + 2] = 1.0;
        theta
    }

    /// Random maze parameter: `n ~ U{0..budget}` walls at distinct cells,
    /// then distinct agent and goal cells that override walls, and a 0.5
    /// marker on the agent's forward cell.
    pub fn random_param(&self, rng: &mut Rng) -> Vec<f32> {
        let n = self.n;
        let cells = n * n;
        let mut theta = vec![0.0f32; self.param_dim()];
        let count = rng.below(self.block_budget + 1);
        let mut order: Vec<usize> = (0..cells).collect();
        for i in 0..count {
            let j = i + rng.below(cells - i);
            order.swap(i, j);
            theta[order[i] * 3] = 1.0;
        }
        let agent = rng.below(cells);
        let mut goal = rng.below(cells - 1);
        if goal >= agent {
            goal += 1;
        }
        let a = (agent / n, agent % n);
        let headings: Vec<Heading> = Heading::ALL
            .into_iter()
            .filter(|h| self.neighbor(a, *h).is_some())
            .collect();
        let heading = headings[rng.below(headings.len())];
        let (fr, fc) = self.neighbor(a, heading).expect("filtered to in-bounds headings");
        theta[(fr * n + fc) * 3 + 1] = 0.5;
        theta[agent * 3 + 1] = 1.0;
        theta[goal * 3 + 2] = 1.0;
        theta[agent * 3] = 0.0;
        theta[goal * 3] = 0.0;
        theta
    }

    /// `count` random parameters as rows of a `[count, N·N·3]` tensor.
    pub fn random_dataset(&self, count: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        let mut data = Vec::with_capacity(count * self.param_dim());
        for _ in 0..count {
            data.extend(self.random_param(&mut rng));
        }
        Tensor::matrix(count, self.param_dim(), data).expect("sized by construction")
    }

    fn neighbor(&self, (r, c): Cell, h: Heading) -> Option<Cell> {
        let (dr, dc) = h.delta();
        let r2 = r as isize + dr;
        let c2 = c as isize + dc;
        (r2 >= 0 && c2 >= 0 && (r2 as usize) < self.n && (c2 as usize) < self.n)
            .then_some((r2 as usize, c2 as usize))
    }

    /// Five fixed held-out mazes: empty room, four rooms, spiral, S-corridor
    /// and a half-density random maze.
    pub fn test_suite(&self) -> Result<Vec<(String, MazeEnv)>> {
        let n = self.n;
        if n < 5 {
            return Err(Error::contract(format!("test suite needs N >= 5, got {n}")));
        }
        let idx = |r: usize, c: usize| r * n + c;
        let mut suite = Vec::with_capacity(5);

        let empty = MazeEnv::new(*self, vec![false; n * n], (n - 1, 0), Heading::North, (0, n - 1))?;
        suite.push(("empty".to_string(), empty));

        let mid = n / 2;
        let mut walls = vec![false; n * n];
        for i in 0..n {
            walls[idx(mid, i)] = true;
            walls[idx(i, mid)] = true;
        }
        let far = mid + 1 + (n - mid - 1) / 2;
        for (r, c) in [(mid, mid / 2), (mid, far), (mid / 2, mid), (far, mid)] {
            walls[idx(r, c)] = false;
        }
        suite.push((
            "four_rooms".to_string(),
            MazeEnv::new(*self, walls, (0, 0), Heading::East, (n - 1, n - 1))?,
        ));

        let (walls, end) = spiral_walls(n);
        suite.push((
            "spiral".to_string(),
            MazeEnv::new(*self, walls, (0, 0), Heading::East, end)?,
        ));

        let mut walls = vec![false; n * n];
        let mut goal = (n - 1, n - 1);
        for (k, r) in (1..n).step_by(2).enumerate() {
            let gap = if k % 2 == 0 { n - 1 } else { 0 };
            for c in (0..n).filter(|&c| c != gap) {
                walls[idx(r, c)] = true;
            }
            goal = (n - 1, if k % 2 == 0 { 0 } else { n - 1 });
        }
        suite.push((
            "s_corridor".to_string(),
            MazeEnv::new(*self, walls, (0, 0), Heading::East, goal)?,
        ));

        let mut attempt = 0u64;
        let dense = loop {
            let mut rng = Rng::new(derive_seed(attempt, "envs.test_suite.dense"));
            let walls: Vec<bool> = (0..n * n).map(|_| rng.uniform() < 0.5).collect();
            let mut walls = walls;
            walls[idx(n - 1, 0)] = false;
            walls[idx(0, n - 1)] = false;
            let env = MazeEnv::new(*self, walls, (n - 1, 0), Heading::North, (0, n - 1))?;
            if env.metrics().solvable {
                break env;
            }
            attempt += 1;
            if attempt > 10_000 {
                return Err(Error::contract("no solvable dense maze found"));
            }
        };
        suite.push(("dense".to_string(), dense));

        for (name, env) in &suite {
            if !env.metrics().solvable {
                return Err(Error::contract(format!("test env {name} is unsolvable")));
            }
        }
        Ok(suite)
    }
}

/// Carves a spiral corridor starting at the top-left corner. Returns the wall
/// grid and the corridor's final cell.
fn spiral_walls(n: usize) -> (Vec<bool>, Cell) {
    let mut walls = vec![true; n * n];
    let (mut r, mut c) = (0isize, 0isize);
    let (mut top, mut bot, mut left, mut right) = (0isize, n as isize - 1, 0isize, n as isize - 1);
    let mut carve = |r: isize, c: isize| walls[r as usize * n + c as usize] = false;
    carve(r, c);
    loop {
        while c < right {
            c += 1;
            carve(r, c);
        }
        top += 2;
        if top > bot {
            break;
        }
        while r < bot {
            r += 1;
            carve(r, c);
        }
        right -= 2;
        if left > right {
            break;
        }
        while c > left {
            c -= 1;
            carve(r, c);
        }
        bot -= 2;
        if top > bot {
            break;
        }
        while r > top {
            r -= 1;
            carve(r, c);
        }
        left += 2;
        if left > right {
            break;
        }
    }
    (walls, (r as usize, c as usize))
}

/// Curriculum complexity of a maze.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvMetrics {
    pub block_count: usize,
    /// BFS distance from agent to goal; `None` when unreachable.
    pub shortest_path: Option<usize>,
    pub solvable: bool,
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f32>,
    pub reward: f32,
    pub done: bool,
}

/// A decoded maze with its episode state.
#[derive(Clone, Debug, PartialEq)]
pub struct MazeEnv {
    family: EnvFamily,
    walls: Vec<bool>,
    start: Cell,
    start_heading: Heading,
    goal: Cell,
    agent: Cell,
    heading: Heading,
    steps: usize,
    done: bool,
}

impl MazeEnv {
    pub fn new(family: EnvFamily, walls: Vec<bool>, agent: Cell, heading: Heading, goal: Cell) -> Result<Self> {
        let n = family.n;
        if walls.len() != n * n {
            return Err(Error::contract(format!("{} wall cells for a {n}×{n} grid", walls.len())));
        }
        if agent.0 >= n || agent.1 >= n || goal.0 >= n || goal.1 >= n {
            return Err(Error::contract("agent or goal outside the grid"));
        }
        if agent == goal {
            return Err(Error::contract("agent and goal share a cell"));
        }
        if walls[agent.0 * n + agent.1] || walls[goal.0 * n + goal.1] {
            return Err(Error::contract("agent or goal placed on a wall"));
        }
        Ok(MazeEnv {
            family,
            walls,
            start: agent,
            start_heading: heading,
            goal,
            agent,
            heading,
            steps: 0,
            done: false,
        })
    }

    pub fn family(&self) -> &EnvFamily {
        &self.family
    }

    pub fn walls(&self) -> &[bool] {
        &self.walls
    }

    pub fn agent(&self) -> (Cell, Heading) {
        (self.agent, self.heading)
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn is_wall(&self, r: isize, c: isize) -> bool {
        let n = self.family.n as isize;
        if r < 0 || c < 0 || r >= n || c >= n {
            return true;
        }
        self.walls[(r * n + c) as usize]
    }

    /// Restores the start state and returns the first observation.
    pub fn reset(&mut self) -> Vec<f32> {
        self.agent = self.start;
        self.heading = self.start_heading;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::contract("step called on a finished episode"));
        }
        self.steps += 1;
        match action {
            Action::Left => self.heading = self.heading.left(),
            Action::Right => self.heading = self.heading.right(),
            Action::Forward => {
                let (dr, dc) = self.heading.delta();
                let r = self.agent.0 as isize + dr;
                let c = self.agent.1 as isize + dc;
                if !self.is_wall(r, c) {
                    self.agent = (r as usize, c as usize);
                }
            }
        }
        let mut reward = 0.0;
        if self.agent == self.goal {
            reward = 1.0 - self.steps as f32 / self.family.max_steps as f32;
            self.done = true;
        } else if self.steps >= self.family.max_steps {
            self.done = true;
        }
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
        })
    }

    /// Egocentric window with the agent at the bottom-centre facing up,
    /// followed by the absolute heading one-hot.
    pub fn observation(&self) -> Vec<f32> {
        let mut obs = vec![0.0f32; obs_dim()];
        self.write_observation(&mut obs);
        obs
    }

    pub fn write_observation(&self, obs: &mut [f32]) {
        let w = OBS_WINDOW as isize;
        let (fr, fc) = self.heading.delta();
        let (rr, rc) = self.heading.right().delta();
        let (ar, ac) = (self.agent.0 as isize, self.agent.1 as isize);
        obs.iter_mut().for_each(|x| *x = 0.0);
        for vr in 0..w {
            let ahead = w - 1 - vr;
            for vc in 0..w {
                let side = vc - w / 2;
                let r = ar + ahead * fr + side * rr;
                let c = ac + ahead * fc + side * rc;
                let kind = if self.is_wall(r, c) {
                    0
                } else if (r as usize, c as usize) == self.goal {
                    2
                } else {
                    1
                };
                obs[((vr * w + vc) * 3 + kind) as usize] = 1.0;
            }
        }
        obs[(w * w * 3) as usize + self.heading.index()] = 1.0;
    }

    pub fn metrics(&self) -> EnvMetrics {
        let n = self.family.n;
        let block_count = self.walls.iter().filter(|&&w| w).count();
        let mut dist = vec![usize::MAX; n * n];
        let mut queue = VecDeque::new();
        let s = self.start.0 * n + self.start.1;
        dist[s] = 0;
        queue.push_back(self.start);
        let mut shortest_path = None;
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r * n + c];
            if (r, c) == self.goal {
                shortest_path = Some(d);
                break;
            }
            for h in Heading::ALL {
                if let Some((r2, c2)) = self.family.neighbor((r, c), h) {
                    let j = r2 * n + c2;
                    if !self.walls[j] && dist[j] == usize::MAX {
                        dist[j] = d + 1;
                        queue.push_back((r2, c2));
                    }
                }
            }
        }
        EnvMetrics {
            block_count,
            shortest_path,
            solvable: shortest_path.is_some(),
        }
    }
}

impl fmt::Display for MazeEnv {
    /// `#` wall, `A` agent, `G` goal, `.` empty; one line per grid row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.family.n;
        for r in 0..n {
            if r > 0 {
                writeln!(f)?;
            }
            for c in 0..n {
                let ch = if (r, c) == self.agent {
                    'A'
                } else if (r, c) == self.goal {
                    'G'
                } else if self.walls[r * n + c] {
                    '#'
                } else {
                    '.'
                };
                write!(f, "{ch}")?;
            }
        }
        Ok(())
    }
}

/// Writes a dataset of parameter rows: `u32 N`, `u64 count`, then the rows
/// as little-endian `f32`.
pub fn write_dataset(path: &Path, n: usize, data: &Tensor) -> Result<()> {
    if data.numel() > 0 && data.cols() != n * n * 3 {
        return Err(Error::contract(format!(
            "dataset rows of width {} for N = {n}",
            data.cols()
        )));
    }
    let count = if data.numel() == 0 { 0 } else { data.rows() };
    let mut bytes = Vec::with_capacity(12 + data.numel() * 4);
    bytes.extend_from_slice(&(n as u32).to_le_bytes());
    bytes.extend_from_slice(&(count as u64).to_le_bytes());
    for v in data.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_dataset`]; returns `N` and the rows.
pub fn read_dataset(path: &Path) -> Result<(usize, Tensor)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let corrupt = |offset: usize, msg: &str| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < 12 {
        return Err(corrupt(bytes.len(), "truncated header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let width = n * n * 3;
    let expected = count
        .checked_mul(width)
        .and_then(|x| x.checked_mul(4))
        .and_then(|x| x.checked_add(12))
        .ok_or_else(|| corrupt(4, "record count overflows"))?;
    if bytes.len() != expected {
        return Err(corrupt(
            bytes.len().min(expected),
            &format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    Ok((n, Tensor::matrix(count, width, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fam(n: usize) -> EnvFamily {
        EnvFamily::new(n).unwrap()
    }

    #[test]
    fn decode_all_zero() {
        let f = fam(7);
        let env = f.decode(&vec![0.0; f.param_dim()]).unwrap();
        assert!(env.walls().iter().all(|&w| !w));
        assert_eq!(env.agent(), ((0, 0), Heading::East));
        assert_eq!(env.goal(), (0, 1));
    }

    #[test]
    fn decode_carves_agent_and_goal() {
        let f = fam(7);
        let mut theta = vec![0.0; f.param_dim()];
        for i in 0..49 {
            theta[i * 3] = 1.0;
        }
        theta[1] = 1.0;
        theta[48 * 3 + 2] = 1.0;
        let env = f.decode(&theta).unwrap();
        assert!(!env.walls()[0] && !env.walls()[48]);
        assert_eq!(env.metrics().block_count, 47);
        assert!(!env.metrics().solvable);
    }

    #[test]
    fn encode_decode_roundtrip() {
        let f = fam(7);
        let mut rng = Rng::new(3);
        for _ in 0..200 {
            let env = f.decode(&f.random_param(&mut rng)).unwrap();
            let again = f.decode(&f.encode(&env)).unwrap();
            assert_eq!(env, again);
        }
    }

    #[test]
    fn random_param_heading_marker() {
        let f = fam(7);
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let theta = f.random_param(&mut rng);
            assert!(theta.iter().all(|&v| v == 0.0 || v == 0.5 || v == 1.0));
            let env = f.decode(&theta).unwrap();
            let ((r, c), h) = env.agent();
            let (dr, dc) = h.delta();
            let (fr, fc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
            assert_eq!(theta[(fr * 7 + fc) * 3 + 1], 0.5);
        }
    }

    #[test]
    fn budget_zero_is_empty() {
        let mut f = fam(7);
        f.block_budget = 0;
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            assert_eq!(f.decode(&f.random_param(&mut rng)).unwrap().metrics().block_count, 0);
        }
        f.block_budget = 48;
        assert!(f.validate().is_err());
    }

    #[test]
    fn reach_goal_reward() {
        let f = fam(5);
        let mut env = MazeEnv::new(f, vec![false; 25], (2, 2), Heading::East, (2, 3)).unwrap();
        env.reset();
        let out = env.step(Action::Forward).unwrap();
        assert!(out.done);
        assert_eq!(out.reward, 1.0 - 1.0 / 40.0);
        assert!(env.step(Action::Left).is_err());
    }

    #[test]
    fn timeout_and_border() {
        let f = fam(5);
        let mut env = MazeEnv::new(f, vec![false; 25], (0, 0), Heading::North, (4, 4)).unwrap();
        env.reset();
        let out = env.step(Action::Forward).unwrap();
        assert_eq!(env.agent().0, (0, 0));
        assert_eq!(out.reward, 0.0);
        let mut total = 0.0;
        let mut done = false;
        while !done {
            let o = env.step(Action::Left).unwrap();
            total += o.reward;
            done = o.done;
        }
        assert_eq!(env.steps(), 40);
        assert_eq!(total, 0.0);
    }

    #[test]
    fn observation_layout() {
        let f = fam(5);
        let env = MazeEnv::new(f, vec![false; 25], (4, 2), Heading::North, (0, 2)).unwrap();
        let obs = env.observation();
        assert_eq!(obs.len(), obs_dim());
        // Each window cell is exactly one-hot.
        for cell in obs[..75].chunks(3) {
            assert_eq!(cell.iter().sum::<f32>(), 1.0);
        }
        // Goal four cells ahead sits in the top-centre cell.
        assert_eq!(obs[(0 * 5 + 2) * 3 + 2], 1.0);
        // Cells to the left and right beyond the border read as wall.
        assert_eq!(obs[(4 * 5 + 0) * 3], 0.0);
        assert_eq!(obs[75], 1.0);
        let east = MazeEnv::new(f, vec![false; 25], (2, 4), Heading::East, (0, 0)).unwrap();
        let o = east.observation();
        assert_eq!(o[(3 * 5 + 2) * 3], 1.0);
        assert_eq!(o[76], 1.0);
    }

    #[test]
    fn bfs_examples() {
        let f = fam(5);
        let env = MazeEnv::new(f, vec![false; 25], (0, 0), Heading::East, (4, 4)).unwrap();
        assert_eq!(env.metrics().shortest_path, Some(8));
        let mut walls = vec![false; 25];
        for i in [7, 11, 13, 17] {
            walls[i] = true;
        }
        let boxed = MazeEnv::new(f, walls, (0, 0), Heading::East, (2, 2)).unwrap();
        assert_eq!(boxed.metrics().shortest_path, None);
        assert!(!boxed.metrics().solvable);
    }

    #[test]
    fn suite_shape() {
        for n in [5, 7, 9] {
            let suite = fam(n).test_suite().unwrap();
            assert_eq!(suite.len(), 5);
            assert!(suite.iter().all(|(_, e)| e.metrics().solvable));
        }
        let suite = fam(7).test_suite().unwrap();
        assert!(suite[1].1.metrics().shortest_path.unwrap() >= 4);
        assert!(EnvFamily { n: 4, block_budget: 0, max_steps: 32 }.test_suite().is_err());
    }

    #[test]
    fn render_text() {
        let f = fam(5);
        let mut walls = vec![false; 25];
        walls[12] = true;
        let env = MazeEnv::new(f, walls, (0, 0), Heading::East, (4, 4)).unwrap();
        assert_eq!(env.to_string(), "A....\n.....\n..#..\n.....\n....G");
    }

    #[test]
    fn dataset_roundtrip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        let f = fam(5);
        let data = f.random_dataset(7, 4);
        write_dataset(&path, 5, &data).unwrap();
        let (n, back) = read_dataset(&path).unwrap();
        assert_eq!(n, 5);
        assert_eq!(back, data);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Corrupt { .. })));
    }
}
