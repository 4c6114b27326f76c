//! Deterministic grid MDPs with a single goal, a value-iteration oracle and
//! reference training loops built from the library's update rules.

#![allow(dead_code)]

use pavgrid::grid::{attempted_cell, Action, Coord, GridMap};
use pavgrid::learning::{
    dyna_observe, dyna_plan, pavlovian_update, q_learning_update, sarsa_update, EligibilityTraces,
    PavlovianTable, QTable, StateId, NUM_ACTIONS,
};
use pavgrid::rewards::{pavlovian_reward, RewardConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP_REWARD: f64 = -1.0;
pub const GOAL_REWARD: f64 = 10.0;
pub const GAMMA: f64 = 0.9;
/// Actions whose values differ by less than this count as tied.
pub const TIE_EPS: f64 = 1e-9;

/// A walled grid whose target cell is an absorbing goal. Every step costs
/// [`STEP_REWARD`]; entering the goal also pays [`GOAL_REWARD`] and ends the
/// episode.
#[derive(Debug, Clone)]
pub struct SuiteMdp {
    pub map: GridMap,
    pub goal: StateId,
    /// Non-terminal states, all of which can reach the goal.
    pub states: Vec<StateId>,
}

impl SuiteMdp {
    pub fn new(map: GridMap) -> Self {
        let goal = map.index(map.target());
        let states = (0..map.num_cells())
            .filter(|&s| s != goal && map.is_traversable(map.coord(s)))
            .collect();
        Self { map, goal, states }
    }

    pub fn num_states(&self) -> usize {
        self.map.num_cells()
    }

    pub fn step(&self, s: StateId, a: usize) -> (f64, Option<StateId>) {
        let next = self.map.index(attempted_cell(
            &self.map,
            self.map.coord(s),
            Action::from_index(a),
        ));
        if next == self.goal {
            (STEP_REWARD + GOAL_REWARD, None)
        } else {
            (STEP_REWARD, Some(next))
        }
    }
}

/// Interior `w x h` grid (both in `2..=6`) with random obstacles, a goal,
/// one start and a few cue cells. Cells cut off from the goal are walled
/// in, so every remaining state can reach it.
pub fn random_mdp(rng: &mut ChaCha8Rng) -> SuiteMdp {
    loop {
        let w = rng.random_range(2..=6usize);
        let h = rng.random_range(2..=6usize);
        let (fw, fh) = (w + 2, h + 2);
        let mut grid = vec![vec!['#'; fw]; fh];
        for row in grid.iter_mut().take(h + 1).skip(1) {
            for cell in row.iter_mut().take(w + 1).skip(1) {
                *cell = if rng.random_bool(0.25) { '#' } else { '.' };
            }
        }
        let free: Vec<(usize, usize)> = (1..=h)
            .flat_map(|r| (1..=w).map(move |c| (r, c)))
            .filter(|&(r, c)| grid[r][c] == '.')
            .collect();
        if free.len() < 3 {
            continue;
        }
        let (gr, gc) = free[rng.random_range(0..free.len())];
        grid[gr][gc] = 'T';
        // Wall in everything that cannot reach the goal.
        let mut reach = vec![vec![false; fw]; fh];
        let mut stack = vec![(gr, gc)];
        reach[gr][gc] = true;
        while let Some((r, c)) = stack.pop() {
            for (dr, dc) in [(0i32, 1i32), (0, -1), (1, 0), (-1, 0)] {
                let (nr, nc) = ((r as i32 + dr) as usize, (c as i32 + dc) as usize);
                if grid[nr][nc] != '#' && !reach[nr][nc] {
                    reach[nr][nc] = true;
                    stack.push((nr, nc));
                }
            }
        }
        let mut open: Vec<(usize, usize)> = Vec::new();
        for (r, c) in free {
            if !reach[r][c] {
                grid[r][c] = '#';
            } else if (r, c) != (gr, gc) {
                open.push((r, c));
            }
        }
        if open.len() < 2 {
            continue;
        }
        let (sr, sc) = open.swap_remove(rng.random_range(0..open.len()));
        grid[sr][sc] = '1';
        for (r, c) in open {
            if rng.random_bool(0.2) {
                grid[r][c] = if rng.random_bool(0.5) { 'G' } else { 'D' };
            }
        }
        let text: String = grid
            .iter()
            .map(|row| row.iter().collect::<String>() + "\n")
            .collect();
        return SuiteMdp::new(GridMap::parse(&text).expect("generated map is valid"));
    }
}

/// The generated suite, reproducible from `seed`. The first entry is a
/// fixed open 4x4 grid.
pub fn suite(seed: u64, count: usize) -> Vec<SuiteMdp> {
    let open4 = "######\n#...T#\n#.D..#\n#..G.#\n#1...#\n######\n";
    let mut out = vec![SuiteMdp::new(GridMap::parse(open4).unwrap())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        out.push(random_mdp(&mut rng));
    }
    out
}

/// Optimal action values for the reward `reward(s, a, r, next)` derived
/// from the environment's `r`, by synchronous value iteration to a fixed
/// point.
pub fn value_iteration_with(
    mdp: &SuiteMdp,
    reward: impl Fn(StateId, usize, f64, Option<StateId>) -> f64,
) -> QTable {
    let mut q = QTable::new(mdp.num_states());
    for _ in 0..10_000 {
        let prev = q.clone();
        let mut delta: f64 = 0.0;
        for &s in &mdp.states {
            for a in 0..NUM_ACTIONS {
                let (r, next) = mdp.step(s, a);
                let target = reward(s, a, r, next) + GAMMA * next.map_or(0.0, |n| prev.max(n));
                delta = delta.max((target - q.get(s, a)).abs());
                q.set(s, a, target);
            }
        }
        if delta == 0.0 {
            break;
        }
    }
    q
}

pub fn value_iteration(mdp: &SuiteMdp) -> QTable {
    value_iteration_with(mdp, |_, _, r, _| r)
}

/// Lowest-index action among those within [`TIE_EPS`] of the best.
pub fn greedy(q: &QTable, s: StateId) -> usize {
    let best = q.max(s);
    q.row(s)
        .iter()
        .position(|&v| v >= best - TIE_EPS)
        .expect("row has a maximum")
}

pub fn greedy_policy(mdp: &SuiteMdp, q: &QTable) -> Vec<usize> {
    mdp.states.iter().map(|&s| greedy(q, s)).collect()
}

pub fn max_abs_diff(mdp: &SuiteMdp, a: &QTable, b: &QTable) -> f64 {
    mdp.states
        .iter()
        .flat_map(|&s| (0..NUM_ACTIONS).map(move |k| (s, k)))
        .map(|(s, k)| (a.get(s, k) - b.get(s, k)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    QLearning,
    /// One-step SARSA whose successor action is the greedy one with
    /// lowest-index tie breaking.
    SarsaGreedyTie,
    Dyna(usize),
}

pub const ALPHA: f64 = 0.5;

/// Trains `learner` from uniformly random behaviour in episodes started at
/// random states, until a whole block of real steps leaves the table
/// unchanged to within `1e-13`. Returns the table and the real steps used.
pub fn train(mdp: &SuiteMdp, learner: Learner, seed: u64) -> (QTable, usize) {
    const BLOCK: usize = 20_000;
    const MAX_STEPS: usize = 4_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plan_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mut q = QTable::new(mdp.num_states());
    let mut model = pavgrid::learning::DynaModel::new(mdp.num_states());
    let mut traces = EligibilityTraces::new(mdp.num_states());
    let mut steps = 0;
    let mut s = mdp.states[rng.random_range(0..mdp.states.len())];
    while steps < MAX_STEPS {
        let before = q.clone();
        for _ in 0..BLOCK {
            let a = rng.random_range(0..NUM_ACTIONS);
            let (r, next) = mdp.step(s, a);
            match learner {
                Learner::QLearning => {
                    q_learning_update(&mut q, s, a, r, next, ALPHA, GAMMA);
                }
                Learner::SarsaGreedyTie => {
                    let na = next.map(|n| (n, greedy(&q, n)));
                    sarsa_update(&mut q, &mut traces, s, a, r, na, ALPHA, GAMMA, 0.0);
                }
                Learner::Dyna(k) => {
                    dyna_observe(&mut model, s, a, r, next);
                    q_learning_update(&mut q, s, a, r, next, ALPHA, GAMMA);
                    dyna_plan(&model, &mut q, k, ALPHA, GAMMA, &mut plan_rng);
                }
            }
            steps += 1;
            s = match next {
                Some(n) if rng.random_range(0..50) != 0 => n,
                _ => mdp.states[rng.random_range(0..mdp.states.len())],
            };
        }
        if max_abs_diff(mdp, &q, &before) < 1e-13 {
            break;
        }
    }
    (q, steps)
}

/// Pavlovian potential trained from random transitions on the suite map,
/// with the cue of the occupied cell presented on every step.
pub fn trained_potential(mdp: &SuiteMdp, seed: u64) -> PavlovianTable {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pav = PavlovianTable::new(mdp.num_states());
    for _ in 0..5_000 {
        let s = mdp.states[rng.random_range(0..mdp.states.len())];
        let a = rng.random_range(0..NUM_ACTIONS);
        let (_, next) = mdp.step(s, a);
        let cell = mdp.map.coord(s);
        let r = pavlovian_reward(&cfg, mdp.map.kind(cell), mdp.map.has_los_to_target(cell));
        pavlovian_update(&mut pav, s, a, r, next, 0.3, GAMMA);
    }
    pav
}

pub fn coord_of(mdp: &SuiteMdp, s: StateId) -> Coord {
    mdp.map.coord(s)
}
