//! Tabular learners: TD(0) state values, Q-learning, SARSA with replacing
//! eligibility traces, the Pavlovian critic, Dyna-Q planning and the
//! arbitration between model-free and model-based values.
//!
//! Every table is dense and indexed by `(state, action)` where the state is
//! a grid cell index and the action index follows [`crate::grid::Action`].
//! A `None` successor marks a terminal transition (no bootstrap).
//! Ties in max/argmax resolve to the lowest action index.

mod arbitration;
mod dyna;

use serde::{Deserialize, Serialize};

use crate::grid::Action;
use crate::policy::DecaySchedule;

pub use arbitration::{arbitration_update, hybrid_q, ArbitrationState};
pub use dyna::{dyna_observe, dyna_plan, state_prediction_error, DynaModel, ModelEntry};

pub type StateId = usize;

pub const NUM_ACTIONS: usize = Action::COUNT;

/// Traces below this magnitude are dropped from the active set.
pub const TRACE_CUTOFF: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub alpha: DecaySchedule,
    pub gamma: f64,
    pub trace_lambda: f64,
    pub planning_steps: usize,
    pub ema_decay: f64,
    pub sharpness: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            alpha: DecaySchedule {
                start: 0.55,
                factor: 0.999,
                floor: 0.08,
            },
            gamma: 0.99,
            trace_lambda: 0.9,
            planning_steps: 4,
            ema_decay: 0.1,
            sharpness: 5.0,
        }
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    num_states: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(num_states: usize) -> Self {
        Self {
            num_states,
            values: vec![0.0; num_states * NUM_ACTIONS],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn get(&self, s: StateId, a: usize) -> f64 {
        self.values[s * NUM_ACTIONS + a]
    }

    pub fn set(&mut self, s: StateId, a: usize, v: f64) {
        self.values[s * NUM_ACTIONS + a] = v;
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s * NUM_ACTIONS..(s + 1) * NUM_ACTIONS]
    }

    pub fn max(&self, s: StateId) -> f64 {
        self.get(s, self.argmax(s))
    }

    pub fn argmax(&self, s: StateId) -> usize {
        argmax(self.row(s))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_all_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    values: Vec<f64>,
}

impl ValueTable {
    pub fn new(num_states: usize) -> Self {
        Self {
            values: vec![0.0; num_states],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn get(&self, s: StateId) -> f64 {
        self.values[s]
    }

    pub fn set(&mut self, s: StateId, v: f64) {
        self.values[s] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Cue-driven action values and the derived state potential
/// `v(s) = max_a q(s, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PavlovianTable {
    pub q: QTable,
    pub v: ValueTable,
}

impl PavlovianTable {
    pub fn new(num_states: usize) -> Self {
        Self {
            q: QTable::new(num_states),
            v: ValueTable::new(num_states),
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.q.is_all_zero() && self.v.values().iter().all(|&v| v == 0.0)
    }
}

/// Replacing eligibility traces. The dense array holds trace values; the
/// active list tracks which entries are nonzero so decay touches only those.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTraces {
    e: Vec<f64>,
    nonzero: Vec<usize>,
    active: bool,
}

impl EligibilityTraces {
    pub fn new(num_states: usize) -> Self {
        Self {
            e: vec![0.0; num_states * NUM_ACTIONS],
            nonzero: Vec::new(),
            active: false,
        }
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn get(&self, s: StateId, a: usize) -> f64 {
        self.e[s * NUM_ACTIONS + a]
    }

    /// Zeroes every trace and switches them on.
    pub fn activate(&mut self) {
        self.clear();
        self.active = true;
    }

    /// Zeroes every trace and switches them off.
    pub fn deactivate(&mut self) {
        self.clear();
        self.active = false;
    }

    fn clear(&mut self) {
        for &i in &self.nonzero {
            self.e[i] = 0.0;
        }
        self.nonzero.clear();
    }

    pub fn num_nonzero(&self) -> usize {
        self.nonzero.len()
    }
}

/// `delta = r + gamma * V(s') - V(s)`, then `V(s) += alpha * delta`.
pub fn td_v_update(
    v: &mut ValueTable,
    s: StateId,
    r: f64,
    s_next: Option<StateId>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let next_value = s_next.map_or(0.0, |n| v.get(n));
    let delta = r + gamma * next_value - v.get(s);
    v.set(s, v.get(s) + alpha * delta);
    delta
}

/// Off-policy one-step update toward the greedy successor value. Returns the
/// reward prediction error.
pub fn q_learning_update(
    q: &mut QTable,
    s: StateId,
    a: usize,
    r: f64,
    s_next: Option<StateId>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let next_value = s_next.map_or(0.0, |n| q.max(n));
    let rpe = r + gamma * next_value - q.get(s, a);
    q.set(s, a, q.get(s, a) + alpha * rpe);
    rpe
}

/// One-step update toward `Q(s', a')` for a chosen successor action.
/// Returns the reward prediction error.
pub fn one_step_update(
    q: &mut QTable,
    s: StateId,
    a: usize,
    r: f64,
    next: Option<(StateId, usize)>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    let next_value = next.map_or(0.0, |(n, na)| q.get(n, na));
    let rpe = r + gamma * next_value - q.get(s, a);
    q.set(s, a, q.get(s, a) + alpha * rpe);
    rpe
}

/// On-policy update toward the value of the action actually taken next.
///
/// With inactive traces this is one-step SARSA. With active traces the
/// current pair's trace is set to 1, every traced entry moves by
/// `alpha * rpe * e`, and all traces decay by `gamma * lambda`.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_update(
    q: &mut QTable,
    traces: &mut EligibilityTraces,
    s: StateId,
    a: usize,
    r: f64,
    next: Option<(StateId, usize)>,
    alpha: f64,
    gamma: f64,
    lambda: f64,
) -> f64 {
    let next_value = next.map_or(0.0, |(n, na)| q.get(n, na));
    let rpe = r + gamma * next_value - q.get(s, a);
    if !traces.active {
        q.set(s, a, q.get(s, a) + alpha * rpe);
        return rpe;
    }
    let idx = s * NUM_ACTIONS + a;
    if traces.e[idx] == 0.0 {
        traces.nonzero.push(idx);
    }
    traces.e[idx] = 1.0;
    let step = alpha * rpe;
    let decay = gamma * lambda;
    let e = &mut traces.e;
    traces.nonzero.retain(|&i| {
        q.values[i] += step * e[i];
        e[i] *= decay;
        if e[i] < TRACE_CUTOFF {
            e[i] = 0.0;
            false
        } else {
            true
        }
    });
    rpe
}

/// `Q(s, a) - V(s)`.
pub fn advantage(q: &QTable, v: &ValueTable, s: StateId, a: usize) -> f64 {
    q.get(s, a) - v.get(s)
}

/// TD update of the cue-association values followed by a refresh of the
/// state potential at `s`.
pub fn pavlovian_update(
    p: &mut PavlovianTable,
    s: StateId,
    a: usize,
    r_pav: f64,
    s_next: Option<StateId>,
    alpha: f64,
    gamma: f64,
) {
    q_learning_update(&mut p.q, s, a, r_pav, s_next, alpha, gamma);
    p.v.set(s, p.q.max(s));
}
