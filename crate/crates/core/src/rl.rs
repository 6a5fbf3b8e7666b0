//! Tabular Q-learning over gridworld cells.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{self, Action, GridWorld, Position, Transition};
use crate::rng;

/// Learning hyperparameters. `max_steps` is the per-episode step budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("alpha must lie in (0, 1]")]
    Alpha,
    #[error("gamma must lie in [0, 1]")]
    Gamma,
    #[error("epsilon must lie in [0, 1]")]
    Epsilon,
    #[error("max_steps must be at least 1")]
    MaxSteps,
}

impl ParamError {
    /// Name of the offending field.
    pub fn field(&self) -> &'static str {
        match self {
            ParamError::Alpha => "alpha",
            ParamError::Gamma => "gamma",
            ParamError::Epsilon => "epsilon",
            ParamError::MaxSteps => "max_steps",
        }
    }
}

impl RlParams {
    /// α = 0.5, γ = 0.9, ε = 0.2, `episodes` episodes, a budget of 4·n² steps.
    pub fn defaults_for(n: usize, episodes: usize) -> Self {
        Self { alpha: 0.5, gamma: 0.9, epsilon: 0.2, episodes, max_steps: 4 * n * n }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ParamError::Alpha);
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ParamError::Gamma);
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ParamError::Epsilon);
        }
        if self.max_steps == 0 {
            return Err(ParamError::MaxSteps);
        }
        Ok(())
    }
}

/// Q(s, a) for every cell of an `n`-sided grid, rows in canonical action order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QTableRepr")]
pub struct QTable {
    n: usize,
    init_seed: u64,
    /// Row-major: index `y * n + x`.
    values: Vec<[f64; 4]>,
}

#[derive(Deserialize)]
struct QTableRepr {
    n: usize,
    init_seed: u64,
    values: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QTableError {
    #[error("expected {expected} rows for n = {n}, found {found}")]
    Shape { n: usize, expected: usize, found: usize },
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
}

impl TryFrom<QTableRepr> for QTable {
    type Error = QTableError;

    fn try_from(r: QTableRepr) -> Result<Self, Self::Error> {
        if r.values.len() != r.n * r.n {
            return Err(QTableError::Shape { n: r.n, expected: r.n * r.n, found: r.values.len() });
        }
        if let Some(i) = r.values.iter().position(|row| row.iter().any(|v| !v.is_finite())) {
            return Err(QTableError::NonFinite(i));
        }
        Ok(QTable { n: r.n, init_seed: r.init_seed, values: r.values })
    }
}

impl QTable {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn row(&self, pos: Position) -> usize {
        debug_assert!(pos.in_bounds(self.n));
        pos.y * self.n + pos.x
    }

    /// The four values at `pos` in canonical action order.
    pub fn values_at(&self, pos: Position) -> [f64; 4] {
        self.values[self.row(pos)]
    }

    pub fn get(&self, pos: Position, action: Action) -> f64 {
        self.values[self.row(pos)][action.index()]
    }

    pub fn set(&mut self, pos: Position, action: Action, value: f64) {
        let row = self.row(pos);
        self.values[row][action.index()] = value;
    }

    pub fn max_at(&self, pos: Position) -> f64 {
        let row = self.values_at(pos);
        row[1..].iter().fold(row[0], |m, &v| m.max(v))
    }

    /// All rows, row-major.
    pub fn rows(&self) -> &[[f64; 4]] {
        &self.values
    }

    pub fn entry_count(&self) -> usize {
        self.values.len() * 4
    }
}

/// Uniform values in `[0, 0.01)` drawn from `seed`.
pub fn init_qtable(n: usize, seed: u64) -> QTable {
    let mut rng = rng::seeded(seed);
    let values = (0..n * n).map(|_| core::array::from_fn(|_| rng.gen_range(0.0..0.01))).collect();
    QTable { n, init_seed: seed, values }
}

/// An action proposal with the values it was chosen from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub action: Action,
    pub q_values: [f64; 4],
    pub exploratory: bool,
}

/// Index of the largest value, earliest index on ties.
pub fn argmax(values: &[f64; 4]) -> Action {
    let mut best = 0;
    for i in 1..4 {
        if values[i] > values[best] {
            best = i;
        }
    }
    Action::ALL[best]
}

/// ε-greedy proposal at `pos`.
///
/// Always consumes one uniform draw for the ε test, plus one more for the
/// random action when exploring.
pub fn suggest<R: Rng + ?Sized>(qtable: &QTable, pos: Position, epsilon: f64, rng: &mut R) -> Suggestion {
    let q_values = qtable.values_at(pos);
    let explore = rng.gen::<f64>() < epsilon;
    let action = if explore { Action::ALL[rng.gen_range(0..4)] } else { argmax(&q_values) };
    Suggestion { action, q_values, exploratory: explore }
}

/// One-step Q-learning update of `(pos, action)`; returns the new value.
/// Terminal transitions do not bootstrap.
pub fn td_update(
    qtable: &mut QTable,
    pos: Position,
    action: Action,
    transition: &Transition,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let target = if transition.terminal {
        transition.reward
    } else {
        transition.reward + gamma * qtable.max_at(transition.next)
    };
    let old = qtable.get(pos, action);
    let new = old + alpha * (target - old);
    qtable.set(pos, action, new);
    new
}

/// Summary of one training episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainEpisode {
    pub success: bool,
    pub steps: usize,
    pub return_: f64,
}

/// Run `params.episodes` episodes of ε-greedy Q-learning from the grid start.
pub fn train<R: Rng + ?Sized>(
    grid: &GridWorld,
    params: &RlParams,
    qtable: &mut QTable,
    rng: &mut R,
) -> Vec<TrainEpisode> {
    train_observed(grid, params, qtable, rng, |_, _, _, _| {})
}

/// [`train`], calling `on_step(episode, pos, action, transition)` after every
/// executed step.
pub fn train_observed<R, F>(
    grid: &GridWorld,
    params: &RlParams,
    qtable: &mut QTable,
    rng: &mut R,
    mut on_step: F,
) -> Vec<TrainEpisode>
where
    R: Rng + ?Sized,
    F: FnMut(usize, Position, Action, &Transition),
{
    assert_eq!(grid.n(), qtable.n(), "grid and q-table sizes differ");
    let mut out = Vec::with_capacity(params.episodes);
    for episode in 0..params.episodes {
        let mut pos = grid.start();
        let mut summary = TrainEpisode { success: false, steps: 0, return_: 0.0 };
        while summary.steps < params.max_steps {
            let action = suggest(qtable, pos, params.epsilon, rng).action;
            let t = env::step(grid, pos, action);
            td_update(qtable, pos, action, &t, params.alpha, params.gamma);
            on_step(episode, pos, action, &t);
            summary.steps += 1;
            summary.return_ += t.reward;
            pos = t.next;
            if t.terminal {
                summary.success = true;
                break;
            }
        }
        out.push(summary);
    }
    out
}

/// A purely greedy walk with no learning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rollout {
    /// Visited cells, starting with the grid start.
    pub path: Vec<Position>,
    pub reached_goal: bool,
}

impl Rollout {
    pub fn steps(&self) -> usize {
        self.path.len() - 1
    }
}

/// Follow argmax actions from the start for at most `max_steps` steps.
pub fn greedy_rollout(grid: &GridWorld, qtable: &QTable, max_steps: usize) -> Rollout {
    let mut pos = grid.start();
    let mut path = vec![pos];
    for _ in 0..max_steps {
        let t = env::step(grid, pos, argmax(&qtable.values_at(pos)));
        pos = t.next;
        path.push(pos);
        if t.terminal {
            return Rollout { path, reached_goal: true };
        }
    }
    Rollout { path, reached_goal: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn empty(n: usize) -> GridWorld {
        GridWorld::from_parts(n, Position::new(0, 0), Position::new(n - 1, n - 1), []).unwrap()
    }

    #[test]
    fn init_range_and_determinism() {
        let a = init_qtable(5, 9);
        assert_eq!(a.entry_count(), 100);
        assert!(a.rows().iter().flatten().all(|&v| (0.0..0.01).contains(&v)));
        assert_eq!(a, init_qtable(5, 9));
        assert_ne!(a, init_qtable(5, 10));
    }

    #[test]
    fn greedy_picks_argmax() {
        let mut q = init_qtable(3, 0);
        let p = Position::new(1, 1);
        for (a, v) in Action::ALL.into_iter().zip([0.1, 0.9, 0.2, 0.3]) {
            q.set(p, a, v);
        }
        let s = suggest(&q, p, 0.0, &mut seeded(1));
        assert_eq!(s.action, Action::Down);
        assert!(!s.exploratory);
        assert_eq!(s.q_values, [0.1, 0.9, 0.2, 0.3]);
    }

    #[test]
    fn ties_go_to_canonical_first() {
        let mut q = init_qtable(3, 0);
        let p = Position::new(0, 0);
        for a in Action::ALL {
            q.set(p, a, 0.5);
        }
        assert_eq!(suggest(&q, p, 0.0, &mut seeded(1)).action, Action::Up);
    }

    #[test]
    fn exploration_is_uniform() {
        let q = init_qtable(3, 0);
        let mut rng = seeded(123);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let s = suggest(&q, Position::new(1, 1), 1.0, &mut rng);
            assert!(s.exploratory);
            counts[s.action.index()] += 1;
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.23..=0.27).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn td_update_arithmetic() {
        let mut q = init_qtable(3, 0);
        let p = Position::new(0, 0);
        let next = Position::new(1, 0);
        for a in Action::ALL {
            q.set(next, a, 0.0);
        }
        q.set(next, Action::Left, 0.2);
        q.set(p, Action::Right, 0.5);
        let t = Transition { next, reward: -0.01, terminal: false, collided: false };
        let v = td_update(&mut q, p, Action::Right, &t, 0.5, 0.9);
        assert!((v - 0.335).abs() < 1e-12);

        let t = Transition { next, reward: 1.0, terminal: true, collided: false };
        assert_eq!(td_update(&mut q, p, Action::Up, &t, 1.0, 0.0), 1.0);

        let before = q.get(p, Action::Down);
        assert_eq!(td_update(&mut q, p, Action::Down, &t, 0.0, 0.9), before);
    }

    #[test]
    fn zero_episodes_leave_table_untouched() {
        let g = empty(4);
        let mut q = init_qtable(4, 3);
        let before = q.clone();
        let params = RlParams { episodes: 0, ..RlParams::defaults_for(4, 0) };
        assert!(train(&g, &params, &mut q, &mut seeded(0)).is_empty());
        assert_eq!(q, before);
    }

    #[test]
    fn train_emits_one_record_per_episode() {
        let g = empty(4);
        let mut q = init_qtable(4, 3);
        let params = RlParams::defaults_for(4, 10);
        let eps = train(&g, &params, &mut q, &mut seeded(0));
        assert_eq!(eps.len(), 10);
        for e in eps {
            assert!(e.steps <= params.max_steps);
            assert!(!e.success || e.steps >= 6);
        }
    }

    #[test]
    fn param_validation_names_fields() {
        let ok = RlParams::defaults_for(5, 10);
        assert!(ok.validate().is_ok());
        assert_eq!(RlParams { alpha: 0.0, ..ok }.validate().unwrap_err().field(), "alpha");
        assert_eq!(RlParams { gamma: 1.1, ..ok }.validate().unwrap_err().field(), "gamma");
        assert_eq!(RlParams { epsilon: -0.1, ..ok }.validate().unwrap_err().field(), "epsilon");
        assert_eq!(RlParams { max_steps: 0, ..ok }.validate().unwrap_err().field(), "max_steps");
    }

    #[test]
    fn greedy_rollout_caps_steps() {
        let g = empty(5);
        let q = init_qtable(5, 1);
        let r = greedy_rollout(&g, &q, 3);
        assert!(r.steps() <= 3);
        assert_eq!(r.path[0], g.start());
    }
}
