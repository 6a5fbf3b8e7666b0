//! Square gridworlds: generation, observation and stepping.
//!
//! Coordinates have their origin at the top-left cell, `x` grows to the right
//! and `y` grows downward, matching the row order of the ASCII renderer.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Smallest and largest supported side lengths.
pub const MIN_SIDE: usize = 2;
pub const MAX_SIDE: usize = 64;

/// Attempts made by [`generate_grid`] before giving up on a solvable layout.
pub const MAX_GENERATION_ATTEMPTS: u64 = 1000;

pub const GOAL_REWARD: f64 = 1.0;
pub const STEP_REWARD: f64 = -0.01;
pub const COLLISION_REWARD: f64 = -0.1;

/// A cell coordinate. Ordered row-major (`y` first, then `x`) so that sorted
/// obstacle sets serialize in reading order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn in_bounds(self, n: usize) -> bool {
        self.x < n && self.y < n
    }

    /// Neighbouring cell in direction `action`, or `None` when it would leave
    /// an `n`-sided grid.
    pub fn moved(self, action: Action, n: usize) -> Option<Position> {
        let (dx, dy) = action.delta();
        let x = self.x.checked_add_signed(dx as isize)?;
        let y = self.y.checked_add_signed(dy as isize)?;
        let next = Position { x, y };
        next.in_bounds(n).then_some(next)
    }

    pub fn manhattan(self, other: Position) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }
}

impl Ord for Position {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Position {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<[usize; 2]> for Position {
    fn from([x, y]: [usize; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Position> for [usize; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// One of the four moves. The declaration order is the canonical order used
/// for tie-breaking and for the layout of Q-value rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    /// `(dx, dy)` in grid coordinates.
    pub const fn delta(self) -> (i64, i64) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
        }
    }

    pub const fn opposite(self) -> Action {
        match self {
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }

    /// Upper-case name as used in prompts and `ACTION:` lines.
    pub const fn as_upper(self) -> &'static str {
        match self {
            Action::Up => "UP",
            Action::Down => "DOWN",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_upper())
    }
}

/// What lies in an adjacent cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellLabel {
    Empty,
    Obstacle,
    Wall,
    Goal,
}

impl CellLabel {
    /// A move into this cell is refused.
    pub fn is_blocked(self) -> bool {
        matches!(self, CellLabel::Obstacle | CellLabel::Wall)
    }

    pub const fn as_word(self) -> &'static str {
        match self {
            CellLabel::Empty => "empty",
            CellLabel::Obstacle => "obstacle",
            CellLabel::Wall => "wall",
            CellLabel::Goal => "goal",
        }
    }
}

impl fmt::Display for CellLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_word())
    }
}

/// The 4-neighbourhood of a cell plus the signed offset to the goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub north: CellLabel,
    pub south: CellLabel,
    pub east: CellLabel,
    pub west: CellLabel,
    #[serde(skip)]
    pub position: Position,
    /// `goal − position` as `(dx, dy)`.
    pub goal_delta: (i64, i64),
}

impl Observation {
    /// Label of the cell reached by `action`.
    pub fn label(&self, action: Action) -> CellLabel {
        match action {
            Action::Up => self.north,
            Action::Down => self.south,
            Action::Left => self.west,
            Action::Right => self.east,
        }
    }
}

/// Result of one call to [`step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub next: Position,
    pub reward: f64,
    pub terminal: bool,
    pub collided: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GridError {
    #[error("grid side {0} outside supported range {MIN_SIDE}..={MAX_SIDE}")]
    InvalidSize(usize),
    #[error("obstacle density must lie in [0, 1]")]
    InvalidDensity,
    #[error("unsatisfiable layout: {0}")]
    Unsatisfiable(&'static str),
    #[error("position {0} lies outside the grid")]
    OutOfBounds(Position),
    #[error("start and goal coincide")]
    StartIsGoal,
    #[error("start or goal cell {0} is an obstacle")]
    BlockedEndpoint(Position),
    #[error("no obstacle-free path from start to goal")]
    Unsolvable,
}

/// An immutable square environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    n: usize,
    density: f64,
    seed: u64,
    start: Position,
    goal: Position,
    obstacles: BTreeSet<Position>,
}

impl GridWorld {
    /// Assemble a grid from explicit parts. Checks bounds and that start and
    /// goal are distinct free cells; solvability is checked separately by
    /// [`GridWorld::validate_solvable`]. The recorded density is the realised
    /// obstacle fraction.
    pub fn from_parts(
        n: usize,
        start: Position,
        goal: Position,
        obstacles: impl IntoIterator<Item = Position>,
    ) -> Result<Self, GridError> {
        let obstacles: BTreeSet<Position> = obstacles.into_iter().collect();
        let density = obstacles.len() as f64 / (n * n) as f64;
        Self::assemble(n, density, 0, start, goal, obstacles)
    }

    fn assemble(
        n: usize,
        density: f64,
        seed: u64,
        start: Position,
        goal: Position,
        obstacles: BTreeSet<Position>,
    ) -> Result<Self, GridError> {
        if !(MIN_SIDE..=MAX_SIDE).contains(&n) {
            return Err(GridError::InvalidSize(n));
        }
        if !(0.0..=1.0).contains(&density) {
            return Err(GridError::InvalidDensity);
        }
        for &p in obstacles.iter().chain([&start, &goal]) {
            if !p.in_bounds(n) {
                return Err(GridError::OutOfBounds(p));
            }
        }
        if start == goal {
            return Err(GridError::StartIsGoal);
        }
        for p in [start, goal] {
            if obstacles.contains(&p) {
                return Err(GridError::BlockedEndpoint(p));
            }
        }
        Ok(Self { n, density, seed, start, goal, obstacles })
    }

    pub fn validate_solvable(&self) -> Result<(), GridError> {
        shortest_path_len(self).map(|_| ()).ok_or(GridError::Unsolvable)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn start(&self) -> Position {
        self.start
    }

    pub fn goal(&self) -> Position {
        self.goal
    }

    /// Obstacles in row-major order.
    pub fn obstacles(&self) -> &BTreeSet<Position> {
        &self.obstacles
    }

    pub fn is_obstacle(&self, p: Position) -> bool {
        self.obstacles.contains(&p)
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    /// Every in-bounds cell that is not an obstacle, row-major.
    pub fn free_cells(&self) -> impl Iterator<Item = Position> + '_ {
        let n = self.n;
        (0..n).flat_map(move |y| (0..n).map(move |x| Position::new(x, y))).filter(|p| !self.is_obstacle(*p))
    }
}

/// Serialized form: `{"n","density","seed","start","goal","obstacles"}`.
#[derive(Serialize, Deserialize)]
struct GridRepr {
    n: usize,
    density: f64,
    seed: u64,
    start: Position,
    goal: Position,
    obstacles: Vec<Position>,
}

impl Serialize for GridWorld {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        GridRepr {
            n: self.n,
            density: self.density,
            seed: self.seed,
            start: self.start,
            goal: self.goal,
            obstacles: self.obstacles.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GridWorld {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = GridRepr::deserialize(d)?;
        GridWorld::assemble(r.n, r.density, r.seed, r.start, r.goal, r.obstacles.into_iter().collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Number of obstacles requested by `density` on an `n`-sided grid
/// (round half up of `density · n²`).
pub fn obstacle_count(n: usize, density: f64) -> usize {
    (density * (n * n) as f64 + 0.5) as usize
}

/// Generate a solvable grid with start `(0,0)` and goal `(n−1,n−1)`.
///
/// Obstacles are sampled uniformly without replacement from the cells other
/// than start and goal. Layouts without a start→goal path are discarded and
/// resampled from the next ChaCha stream of `seed`, up to
/// [`MAX_GENERATION_ATTEMPTS`] times.
pub fn generate_grid(n: usize, density: f64, seed: u64) -> Result<GridWorld, GridError> {
    if !(MIN_SIDE..=MAX_SIDE).contains(&n) {
        return Err(GridError::InvalidSize(n));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(GridError::InvalidDensity);
    }
    let cells = n * n;
    let count = obstacle_count(n, density);
    if count > cells - 2 {
        return Err(GridError::Unsatisfiable("more obstacles than placeable cells"));
    }

    let start = Position::new(0, 0);
    let goal = Position::new(n - 1, n - 1);
    let candidates: Vec<Position> =
        (0..n).flat_map(|y| (0..n).map(move |x| Position::new(x, y))).filter(|&p| p != start && p != goal).collect();

    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = rng::seeded(seed);
        rng.set_stream(attempt);
        let obstacles: BTreeSet<Position> =
            index::sample(&mut rng, candidates.len(), count).into_iter().map(|i| candidates[i]).collect();
        let grid = GridWorld::assemble(n, density, seed, start, goal, obstacles)?;
        if shortest_path_len(&grid).is_some() {
            return Ok(grid);
        }
    }
    Err(GridError::Unsatisfiable("no solvable layout within the attempt cap"))
}

fn label_at(grid: &GridWorld, from: Position, action: Action) -> CellLabel {
    match from.moved(action, grid.n) {
        None => CellLabel::Wall,
        Some(p) if grid.is_obstacle(p) => CellLabel::Obstacle,
        Some(p) if p == grid.goal => CellLabel::Goal,
        Some(_) => CellLabel::Empty,
    }
}

/// Describe the neighbourhood of `pos`.
///
/// `pos` must be an in-bounds free cell; violating that is a caller bug and
/// trips a debug assertion.
pub fn observe(grid: &GridWorld, pos: Position) -> Observation {
    debug_assert!(pos.in_bounds(grid.n) && !grid.is_obstacle(pos), "observe at invalid {pos}");
    Observation {
        north: label_at(grid, pos, Action::Up),
        south: label_at(grid, pos, Action::Down),
        east: label_at(grid, pos, Action::Right),
        west: label_at(grid, pos, Action::Left),
        position: pos,
        goal_delta: (grid.goal.x as i64 - pos.x as i64, grid.goal.y as i64 - pos.y as i64),
    }
}

/// Apply `action` at `pos`.
///
/// Blocked moves (wall or obstacle) leave the agent in place with reward
/// −0.1. Entering the goal pays +1.0 and terminates; any other move costs
/// −0.01.
pub fn step(grid: &GridWorld, pos: Position, action: Action) -> Transition {
    debug_assert!(pos.in_bounds(grid.n) && !grid.is_obstacle(pos), "step from invalid {pos}");
    match pos.moved(action, grid.n) {
        Some(target) if !grid.is_obstacle(target) => {
            if target == grid.goal {
                Transition { next: target, reward: GOAL_REWARD, terminal: true, collided: false }
            } else {
                Transition { next: target, reward: STEP_REWARD, terminal: false, collided: false }
            }
        }
        _ => Transition { next: pos, reward: COLLISION_REWARD, terminal: false, collided: true },
    }
}

/// BFS distance from start to goal over free cells, or `None` if the goal is
/// unreachable.
pub fn shortest_path_len(grid: &GridWorld) -> Option<usize> {
    let n = grid.n;
    let mut dist = vec![usize::MAX; n * n];
    let idx = |p: Position| p.y * n + p.x;
    let mut queue = VecDeque::new();
    dist[idx(grid.start)] = 0;
    queue.push_back(grid.start);
    while let Some(p) = queue.pop_front() {
        let d = dist[idx(p)];
        if p == grid.goal {
            return Some(d);
        }
        for a in Action::ALL {
            if let Some(q) = p.moved(a, n) {
                if !grid.is_obstacle(q) && dist[idx(q)] == usize::MAX {
                    dist[idx(q)] = d + 1;
                    queue.push_back(q);
                }
            }
        }
    }
    None
}
