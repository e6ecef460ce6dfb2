//! Evaluation environments behind a dual-observation interface.
//!
//! Every environment exposes a cheap low-level observation `x` and an
//! on-demand high-level observation `y`. [`DualEnv`] wraps an environment
//! with the ε-stochastic action failure, the step cap, and the one-hot of the
//! previously chosen action that is appended to `x`.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::BonnRng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid action {action} (environment has {n_actions} actions)")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("goal {goal:?} unreachable from {from:?}")]
    Unreachable { from: Cell, goal: Cell },
    #[error("step called on a finished episode")]
    Finished,
}

pub type Result<T> = std::result::Result<T, EnvError>;

/// Grid cell as `(row, col)`.
pub type Cell = (usize, usize);

/// Grid actions, in tie-breaking order.
pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const GRID_ACTIONS: usize = 4;

fn grid_move((r, c): Cell, action: usize) -> Cell {
    match action {
        UP => (r.wrapping_sub(1), c),
        DOWN => (r + 1, c),
        LEFT => (r, c.wrapping_sub(1)),
        _ => (r, c + 1),
    }
}

/// Which part of the state is cheap (`x`) and which is costly (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObsMode {
    /// `x` carries only the previous action; `y` is the full observation.
    #[default]
    Blind,
    /// `x` carries a partial observation; `y` the remainder.
    Split,
}

impl FromStr for ObsMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "blind" => Ok(ObsMode::Blind),
            "split" => Ok(ObsMode::Split),
            other => Err(format!("unknown observation mode `{other}`")),
        }
    }
}

impl fmt::Display for ObsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObsMode::Blind => "blind",
            ObsMode::Split => "split",
        })
    }
}

/// Wall layout of a grid environment, for rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub walls: Vec<bool>,
}

impl GridGeometry {
    pub fn is_wall(&self, (r, c): Cell) -> bool {
        r >= self.rows || c >= self.cols || self.walls[r * self.cols + c]
    }
}

/// An episodic environment with a discrete action set.
pub trait Environment: Send {
    fn num_actions(&self) -> usize;
    /// Length of the environment part of `x` (the previous-action one-hot is added by [`DualEnv`]).
    fn low_level_dim(&self) -> usize;
    fn high_level_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut BonnRng);
    /// Applies `action`; returns `(reward, terminal)`.
    fn step(&mut self, action: usize) -> Result<(f64, bool)>;
    fn low_level(&self) -> Vec<f64>;
    fn high_level(&self) -> Vec<f64>;

    fn position(&self) -> Option<Cell> {
        None
    }
    fn goal(&self) -> Option<Cell> {
        None
    }
    /// Identifier of the region (room) the agent is in, when meaningful.
    fn region(&self) -> Option<usize> {
        None
    }
    /// Label used to colour exported option latents; `-1` when absent.
    fn goal_annotation(&self) -> i64 {
        -1
    }
    fn geometry(&self) -> Option<GridGeometry> {
        None
    }
}

/// What the agent sees after each transition. `y` is fetched separately via
/// [`DualEnv::high_level`].
#[derive(Debug, Clone, PartialEq)]
pub struct DualObservation {
    pub x: Vec<f64>,
    pub done: bool,
    pub reward_prev: f64,
}

/// With probability `epsilon`, replaces `action` by a uniformly drawn one.
pub fn apply_stochasticity(
    action: usize,
    epsilon: f64,
    n_actions: usize,
    rng: &mut BonnRng,
) -> usize {
    if epsilon <= 0.0 {
        return action;
    }
    if rng.gen::<f64>() < epsilon {
        rng.gen_range(0..n_actions)
    } else {
        action
    }
}

/// Environment plus ε-failure, step cap and previous-action bookkeeping.
pub struct DualEnv {
    inner: Box<dyn Environment>,
    epsilon: f64,
    last_action: Option<usize>,
    steps: usize,
    done: bool,
    noise: BonnRng,
}

impl DualEnv {
    pub fn new(inner: Box<dyn Environment>, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(EnvError::InvalidConfig(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        Ok(DualEnv {
            inner,
            epsilon,
            last_action: None,
            steps: 0,
            done: true,
            noise: crate::rng_from_seed(0),
        })
    }

    pub fn inner(&self) -> &dyn Environment {
        self.inner.as_ref()
    }

    pub fn num_actions(&self) -> usize {
        self.inner.num_actions()
    }

    pub fn x_dim(&self) -> usize {
        self.inner.low_level_dim() + self.inner.num_actions()
    }

    pub fn y_dim(&self) -> usize {
        self.inner.high_level_dim()
    }

    pub fn max_steps(&self) -> usize {
        self.inner.max_steps()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Resets from an episode seed. The environment and the action-failure
    /// noise use independent streams derived from it.
    pub fn reset(&mut self, seed: u64) -> DualObservation {
        let mut env_rng = crate::rng_from_seed(seed);
        self.inner.reset(&mut env_rng);
        self.noise = crate::rng_from_stream(seed, 1);
        self.last_action = None;
        self.steps = 0;
        self.done = false;
        self.observe(0.0)
    }

    pub fn observe(&self, reward_prev: f64) -> DualObservation {
        let mut x = self.inner.low_level();
        let n = self.inner.num_actions();
        x.extend((0..n).map(|a| {
            if Some(a) == self.last_action {
                1.0
            } else {
                0.0
            }
        }));
        DualObservation {
            x,
            done: self.done,
            reward_prev,
        }
    }

    /// The high-level observation of the current state.
    pub fn high_level(&self) -> Vec<f64> {
        self.inner.high_level()
    }

    /// Executes the agent's chosen action (possibly replaced by a random one).
    pub fn step(&mut self, action: usize) -> Result<(DualObservation, f64, bool)> {
        let n = self.inner.num_actions();
        if action >= n {
            return Err(EnvError::InvalidAction {
                action,
                n_actions: n,
            });
        }
        if self.done {
            return Err(EnvError::Finished);
        }
        let executed = apply_stochasticity(action, self.epsilon, n, &mut self.noise);
        let (reward, terminal) = self.inner.step(executed)?;
        self.steps += 1;
        self.last_action = Some(action);
        self.done = terminal || self.steps >= self.inner.max_steps();
        Ok((self.observe(reward), reward, self.done))
    }
}

// ---------------------------------------------------------------------------
// CartPole

pub const CARTPOLE_MAX_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
    pub steps: usize,
}

/// Classic cart-pole balancing with Euler integration. Actions: 0 left, 1 right.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub state: CartPoleState,
}

impl CartPole {
    pub const GRAVITY: f64 = 9.8;
    pub const MASS_CART: f64 = 1.0;
    pub const MASS_POLE: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const TAU: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    pub const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;

    pub fn new() -> Self {
        CartPole {
            state: CartPoleState {
                x: 0.0,
                x_dot: 0.0,
                theta: 0.0,
                theta_dot: 0.0,
                steps: 0,
            },
        }
    }

    /// One Euler step of the cart-pole dynamics under horizontal force `force`.
    pub fn dynamics(s: CartPoleState, force: f64) -> CartPoleState {
        let total_mass = Self::MASS_CART + Self::MASS_POLE;
        let pole_mass_length = Self::MASS_POLE * Self::HALF_LENGTH;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (Self::GRAVITY * sin - cos * temp)
            / (Self::HALF_LENGTH * (4.0 / 3.0 - Self::MASS_POLE * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        CartPoleState {
            x: s.x + Self::TAU * s.x_dot,
            x_dot: s.x_dot + Self::TAU * x_acc,
            theta: s.theta + Self::TAU * s.theta_dot,
            theta_dot: s.theta_dot + Self::TAU * theta_acc,
            steps: s.steps + 1,
        }
    }

    pub fn failed(s: &CartPoleState) -> bool {
        s.x.abs() > Self::X_LIMIT || s.theta.abs() > Self::THETA_LIMIT
    }
}

impl Default for CartPole {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for CartPole {
    fn num_actions(&self) -> usize {
        2
    }
    fn low_level_dim(&self) -> usize {
        0
    }
    fn high_level_dim(&self) -> usize {
        4
    }
    fn max_steps(&self) -> usize {
        CARTPOLE_MAX_STEPS
    }

    fn reset(&mut self, rng: &mut BonnRng) {
        let mut draw = || rng.gen_range(-0.05..=0.05);
        self.state = CartPoleState {
            x: draw(),
            x_dot: draw(),
            theta: draw(),
            theta_dot: draw(),
            steps: 0,
        };
    }

    fn step(&mut self, action: usize) -> Result<(f64, bool)> {
        if action >= 2 {
            return Err(EnvError::InvalidAction {
                action,
                n_actions: 2,
            });
        }
        let force = if action == 1 {
            Self::FORCE
        } else {
            -Self::FORCE
        };
        self.state = Self::dynamics(self.state, force);
        let terminal = Self::failed(&self.state) || self.state.steps >= CARTPOLE_MAX_STEPS;
        Ok((1.0, terminal))
    }

    fn low_level(&self) -> Vec<f64> {
        Vec::new()
    }

    fn high_level(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.x, s.x_dot, s.theta, s.theta_dot]
    }
}

// ---------------------------------------------------------------------------
// k×k rooms

/// A square grid of `k×k` rooms separated by one-cell walls, with one
/// centred door in every wall shared by two rooms.
#[derive(Debug, Clone)]
pub struct RoomsWorld {
    pub k: usize,
    pub room_size: usize,
    pub mode: ObsMode,
    pub max_steps: usize,
    side: usize,
    walls: Vec<bool>,
    doors: Vec<Cell>,
    pub agent: Cell,
    pub goal: Cell,
}

impl RoomsWorld {
    pub const GOAL_REWARD: f64 = 20.0;
    pub const MOVE_REWARD: f64 = -1.0;

    pub fn build(k: usize, room_size: usize, mode: ObsMode) -> Result<Self> {
        if k == 0 {
            return Err(EnvError::InvalidConfig(
                "rooms per side must be at least 1".into(),
            ));
        }
        if room_size < 3 || room_size.is_multiple_of(2) {
            return Err(EnvError::InvalidConfig(format!(
                "room size must be odd and at least 3, got {room_size}"
            )));
        }
        let stride = room_size + 1;
        let side = k * room_size + k + 1;
        let mut walls = vec![false; side * side];
        for i in 0..side {
            for j in 0..side {
                if i % stride == 0 || j % stride == 0 {
                    walls[i * side + j] = true;
                }
            }
        }
        let mid = room_size / 2;
        let mut doors = Vec::new();
        for room_r in 0..k {
            for room_c in 0..k {
                if room_c + 1 < k {
                    doors.push((room_r * stride + 1 + mid, (room_c + 1) * stride));
                }
                if room_r + 1 < k {
                    doors.push(((room_r + 1) * stride, room_c * stride + 1 + mid));
                }
            }
        }
        for &(r, c) in &doors {
            walls[r * side + c] = false;
        }
        let max_steps = match k {
            1 | 2 => 100,
            _ => 200,
        };
        Ok(RoomsWorld {
            k,
            room_size,
            mode,
            max_steps,
            side,
            walls,
            doors,
            agent: (1, 1),
            goal: (1, 1),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn doors(&self) -> &[Cell] {
        &self.doors
    }

    pub fn is_wall(&self, (r, c): Cell) -> bool {
        r >= self.side || c >= self.side || self.walls[r * self.side + c]
    }

    fn is_door(&self, cell: Cell) -> bool {
        self.doors.contains(&cell)
    }

    /// Room `(row, col)` and in-room offset of a grid cell. Door cells belong
    /// to the room above or to the left, at offset `room_size`.
    pub fn locate(&self, (r, c): Cell) -> ((usize, usize), (usize, usize)) {
        let stride = self.room_size + 1;
        let split = |v: usize| {
            let v = v.saturating_sub(1);
            (
                (v / stride).min(self.k - 1),
                v - (v / stride).min(self.k - 1) * stride,
            )
        };
        let (room_r, in_r) = split(r);
        let (room_c, in_c) = split(c);
        ((room_r, room_c), (in_r, in_c))
    }

    /// Room index and in-room offset of the agent, both starting at `(0, 0)`.
    pub fn agent_room_position(&self) -> ((usize, usize), (usize, usize)) {
        self.locate(self.agent)
    }

    /// Door presence (up, down, left, right) for a room.
    pub fn room_doors(&self, (room_r, room_c): (usize, usize)) -> [bool; 4] {
        [
            room_r > 0,
            room_r + 1 < self.k,
            room_c > 0,
            room_c + 1 < self.k,
        ]
    }

    /// Cells where a goal may be placed: room interiors other than the start.
    pub fn goal_candidates(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for r in 0..self.side {
            for c in 0..self.side {
                let cell = (r, c);
                if !self.is_wall(cell) && !self.is_door(cell) && cell != (1, 1) {
                    out.push(cell);
                }
            }
        }
        out
    }

    fn position_fields(&self) -> [f64; 2] {
        let (_, (in_r, in_c)) = self.locate(self.agent);
        let n = self.room_size as f64;
        [in_r as f64 / n, in_c as f64 / n]
    }

    /// Door bits, goal-in-room flag, goal in-room position (zeros if absent).
    fn room_fields(&self) -> [f64; 7] {
        let (room, _) = self.locate(self.agent);
        let doors = self.room_doors(room);
        let (goal_room, (gr, gc)) = self.locate(self.goal);
        let n = self.room_size as f64;
        let bit = |b: bool| if b { 1.0 } else { 0.0 };
        let present = goal_room == room;
        let (gr, gc) = if present {
            (gr as f64 / n, gc as f64 / n)
        } else {
            (0.0, 0.0)
        };
        [
            bit(doors[0]),
            bit(doors[1]),
            bit(doors[2]),
            bit(doors[3]),
            bit(present),
            gr,
            gc,
        ]
    }
}

impl Environment for RoomsWorld {
    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }
    fn low_level_dim(&self) -> usize {
        match self.mode {
            ObsMode::Blind => 0,
            ObsMode::Split => 2,
        }
    }
    fn high_level_dim(&self) -> usize {
        match self.mode {
            ObsMode::Blind => 9,
            ObsMode::Split => 7,
        }
    }
    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut BonnRng) {
        self.agent = (1, 1);
        let candidates = self.goal_candidates();
        self.goal = *candidates.choose(rng).expect("at least one goal cell");
    }

    fn step(&mut self, action: usize) -> Result<(f64, bool)> {
        if action >= GRID_ACTIONS {
            return Err(EnvError::InvalidAction {
                action,
                n_actions: GRID_ACTIONS,
            });
        }
        let next = grid_move(self.agent, action);
        if !self.is_wall(next) {
            self.agent = next;
        }
        if self.agent == self.goal {
            Ok((Self::GOAL_REWARD, true))
        } else {
            Ok((Self::MOVE_REWARD, false))
        }
    }

    fn low_level(&self) -> Vec<f64> {
        match self.mode {
            ObsMode::Blind => Vec::new(),
            ObsMode::Split => self.position_fields().to_vec(),
        }
    }

    fn high_level(&self) -> Vec<f64> {
        match self.mode {
            ObsMode::Blind => {
                let mut y = self.position_fields().to_vec();
                y.extend_from_slice(&self.room_fields());
                y
            }
            ObsMode::Split => self.room_fields().to_vec(),
        }
    }

    fn position(&self) -> Option<Cell> {
        Some(self.agent)
    }

    fn goal(&self) -> Option<Cell> {
        Some(self.goal)
    }

    fn region(&self) -> Option<usize> {
        let ((r, c), _) = self.locate(self.agent);
        Some(r * self.k + c)
    }

    /// 3×3 sub-grid index of the goal's in-room position, or −1 when the goal
    /// is not in the agent's room.
    fn goal_annotation(&self) -> i64 {
        let (room, _) = self.locate(self.agent);
        let (goal_room, (gr, gc)) = self.locate(self.goal);
        if room != goal_room {
            return -1;
        }
        let bin = |v: usize| (v * 3 / self.room_size).min(2);
        (bin(gr) * 3 + bin(gc)) as i64
    }

    fn geometry(&self) -> Option<GridGeometry> {
        Some(GridGeometry {
            rows: self.side,
            cols: self.side,
            walls: self.walls.clone(),
        })
    }
}

// ---------------------------------------------------------------------------
// Mazes

/// A perfect maze on a `width×height` cell grid; cells with both coordinates
/// odd are rooms of the lattice, the rest are walls or carved passages.
#[derive(Debug, Clone, PartialEq)]
pub struct Maze {
    pub width: usize,
    pub height: usize,
    open: Vec<bool>,
}

impl Maze {
    pub fn is_open(&self, (r, c): Cell) -> bool {
        r < self.height && c < self.width && self.open[r * self.width + c]
    }

    pub fn open_cells(&self) -> Vec<Cell> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&cell| self.is_open(cell))
            .collect()
    }

    pub fn open_neighbours(&self, cell: Cell) -> impl Iterator<Item = (usize, Cell)> + '_ {
        (0..GRID_ACTIONS)
            .map(move |a| (a, grid_move(cell, a)))
            .filter(|&(_, n)| self.is_open(n))
    }

    pub fn wall_bitmap(&self) -> Vec<bool> {
        self.open.iter().map(|o| !o).collect()
    }

    pub fn geometry(&self) -> GridGeometry {
        GridGeometry {
            rows: self.height,
            cols: self.width,
            walls: self.wall_bitmap(),
        }
    }

    /// Builds a maze from an explicit open-cell bitmap (row-major).
    pub fn from_open(width: usize, height: usize, open: Vec<bool>) -> Result<Self> {
        if open.len() != width * height {
            return Err(EnvError::InvalidConfig(
                "bitmap length does not match dimensions".into(),
            ));
        }
        Ok(Maze {
            width,
            height,
            open,
        })
    }
}

/// Depth-first recursive-backtracker maze generation.
pub fn maze_generate(width: usize, height: usize, rng: &mut BonnRng) -> Result<Maze> {
    if width < 5 || height < 5 || width.is_multiple_of(2) || height.is_multiple_of(2) {
        return Err(EnvError::InvalidConfig(format!(
            "maze dimensions must be odd and at least 5, got {width}x{height}"
        )));
    }
    let mut open = vec![false; width * height];
    let mut visited = vec![false; width * height];
    let start = (1, 1);
    open[width + 1] = true;
    visited[width + 1] = true;
    let mut stack = vec![start];
    while let Some(&(r, c)) = stack.last() {
        let mut candidates: Vec<(Cell, Cell)> = Vec::with_capacity(4);
        if r >= 3 {
            candidates.push(((r - 2, c), (r - 1, c)));
        }
        if r + 2 < height {
            candidates.push(((r + 2, c), (r + 1, c)));
        }
        if c >= 3 {
            candidates.push(((r, c - 2), (r, c - 1)));
        }
        if c + 2 < width {
            candidates.push(((r, c + 2), (r, c + 1)));
        }
        candidates.retain(|&((nr, nc), _)| !visited[nr * width + nc]);
        match candidates.choose(rng) {
            Some(&((nr, nc), (wr, wc))) => {
                visited[nr * width + nc] = true;
                open[nr * width + nc] = true;
                open[wr * width + wc] = true;
                stack.push((nr, nc));
            }
            None => {
                stack.pop();
            }
        }
    }
    Ok(Maze {
        width,
        height,
        open,
    })
}

/// Shortest-path distances (in moves) from `goal` to every open cell.
pub fn distances_from(maze: &Maze, goal: Cell) -> Vec<Option<usize>> {
    let mut dist = vec![None; maze.width * maze.height];
    if !maze.is_open(goal) {
        return dist;
    }
    dist[goal.0 * maze.width + goal.1] = Some(0);
    let mut queue = VecDeque::from([goal]);
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.0 * maze.width + cell.1].unwrap();
        for (_, n) in maze.open_neighbours(cell) {
            let slot = &mut dist[n.0 * maze.width + n.1];
            if slot.is_none() {
                *slot = Some(d + 1);
                queue.push_back(n);
            }
        }
    }
    dist
}

/// First move of a shortest path from `from` to `goal`; ties go to the
/// earliest of up, down, left, right.
pub fn bfs_optimal_action(maze: &Maze, from: Cell, goal: Cell) -> Result<usize> {
    if from == goal || !maze.is_open(from) || !maze.is_open(goal) {
        return Err(EnvError::Unreachable { from, goal });
    }
    let dist = distances_from(maze, goal);
    let here = dist[from.0 * maze.width + from.1].ok_or(EnvError::Unreachable { from, goal })?;
    maze.open_neighbours(from)
        .find(|&(_, n)| dist[n.0 * maze.width + n.1] == Some(here - 1))
        .map(|(a, _)| a)
        .ok_or(EnvError::Unreachable { from, goal })
}

/// Random maze regenerated each episode; `y` is the planner's next move.
#[derive(Debug, Clone)]
pub struct OracleMaze {
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub maze: Maze,
    pub agent: Cell,
    pub goal: Cell,
}

impl OracleMaze {
    pub const GOAL_REWARD: f64 = 20.0;
    pub const MOVE_REWARD: f64 = -1.0;

    pub fn new(width: usize, height: usize) -> Result<Self> {
        let maze = maze_generate(width, height, &mut crate::rng_from_seed(0))?;
        Ok(OracleMaze {
            width,
            height,
            max_steps: 200,
            maze,
            agent: (1, 1),
            goal: (1, 3),
        })
    }

    /// Wall flags of the 3×3 neighbourhood, row-major, including the agent's cell.
    pub fn surroundings(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        let (r, c) = self.agent;
        for dr in 0..3 {
            for dc in 0..3 {
                let cell = ((r + dr).wrapping_sub(1), (c + dc).wrapping_sub(1));
                out[dr * 3 + dc] = if self.maze.is_open(cell) { 0.0 } else { 1.0 };
            }
        }
        out
    }
}

impl Environment for OracleMaze {
    fn num_actions(&self) -> usize {
        GRID_ACTIONS
    }
    fn low_level_dim(&self) -> usize {
        9
    }
    fn high_level_dim(&self) -> usize {
        GRID_ACTIONS
    }
    fn max_steps(&self) -> usize {
        self.max_steps
    }

    fn reset(&mut self, rng: &mut BonnRng) {
        self.maze =
            maze_generate(self.width, self.height, rng).expect("dimensions validated in new");
        let cells = self.maze.open_cells();
        let picked: Vec<Cell> = cells.choose_multiple(rng, 2).copied().collect();
        self.agent = picked[0];
        self.goal = picked[1];
    }

    fn step(&mut self, action: usize) -> Result<(f64, bool)> {
        if action >= GRID_ACTIONS {
            return Err(EnvError::InvalidAction {
                action,
                n_actions: GRID_ACTIONS,
            });
        }
        let next = grid_move(self.agent, action);
        if self.maze.is_open(next) {
            self.agent = next;
        }
        if self.agent == self.goal {
            Ok((Self::GOAL_REWARD, true))
        } else {
            Ok((Self::MOVE_REWARD, false))
        }
    }

    fn low_level(&self) -> Vec<f64> {
        self.surroundings().to_vec()
    }

    fn high_level(&self) -> Vec<f64> {
        let mut y = vec![0.0; GRID_ACTIONS];
        if let Ok(a) = bfs_optimal_action(&self.maze, self.agent, self.goal) {
            y[a] = 1.0;
        }
        y
    }

    fn position(&self) -> Option<Cell> {
        Some(self.agent)
    }

    fn goal(&self) -> Option<Cell> {
        Some(self.goal)
    }

    fn geometry(&self) -> Option<GridGeometry> {
        Some(self.maze.geometry())
    }
}

// ---------------------------------------------------------------------------
// Bandit

/// One-step bandit: action `i` pays `payouts[i]`. `y` is a constant bias input.
#[derive(Debug, Clone)]
pub struct Bandit {
    pub payouts: Vec<f64>,
}

impl Environment for Bandit {
    fn num_actions(&self) -> usize {
        self.payouts.len()
    }
    fn low_level_dim(&self) -> usize {
        0
    }
    fn high_level_dim(&self) -> usize {
        1
    }
    fn max_steps(&self) -> usize {
        1
    }
    fn reset(&mut self, _rng: &mut BonnRng) {}
    fn step(&mut self, action: usize) -> Result<(f64, bool)> {
        self.payouts
            .get(action)
            .map(|&r| (r, true))
            .ok_or(EnvError::InvalidAction {
                action,
                n_actions: self.payouts.len(),
            })
    }
    fn low_level(&self) -> Vec<f64> {
        Vec::new()
    }
    fn high_level(&self) -> Vec<f64> {
        vec![1.0]
    }
}

/// Serializable description of an environment, used to build fresh instances.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    CartPole,
    Rooms {
        k: usize,
        room_size: usize,
        mode: ObsMode,
    },
    OracleMaze {
        width: usize,
        height: usize,
    },
    Bandit {
        payouts: Vec<f64>,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::CartPole => Box::new(CartPole::new()),
            EnvSpec::Rooms { k, room_size, mode } => {
                Box::new(RoomsWorld::build(*k, *room_size, *mode)?)
            }
            EnvSpec::OracleMaze { width, height } => Box::new(OracleMaze::new(*width, *height)?),
            EnvSpec::Bandit { payouts } => {
                if payouts.is_empty() {
                    return Err(EnvError::InvalidConfig(
                        "bandit needs at least one arm".into(),
                    ));
                }
                Box::new(Bandit {
                    payouts: payouts.clone(),
                })
            }
        })
    }

    pub fn dual(&self, epsilon: f64) -> Result<DualEnv> {
        DualEnv::new(self.build()?, epsilon)
    }
}
