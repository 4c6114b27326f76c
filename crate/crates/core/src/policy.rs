//! Softmax action selection over instrumental values plus an
//! action-dependent Pavlovian bias, and the per-episode decay schedules.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Action;
use crate::learning::{PavlovianTable, StateId, NUM_ACTIONS};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("score {index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
}

/// Exponential decay with a floor: `max(floor, start * factor^n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySchedule {
    pub start: f64,
    pub factor: f64,
    pub floor: f64,
}

impl DecaySchedule {
    pub fn value(&self, episode_index: usize) -> f64 {
        schedule_value(self, episode_index)
    }
}

pub fn schedule_value(sched: &DecaySchedule, episode_index: usize) -> f64 {
    let n = i32::try_from(episode_index).unwrap_or(i32::MAX);
    (sched.start * sched.factor.powi(n)).max(sched.floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub temperature: DecaySchedule,
    pub pav_weight: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            temperature: DecaySchedule {
                start: 1.0,
                factor: 0.999,
                floor: 0.08,
            },
            pav_weight: 1.0,
        }
    }
}

/// Instrumental values, plus `pav_weight * q_pav(s, .)` when the Pavlovian
/// system is on.
pub fn action_scores(
    q_hybrid: &[f64; NUM_ACTIONS],
    pav: &PavlovianTable,
    s: StateId,
    pav_weight: f64,
    pav_enabled: bool,
) -> [f64; NUM_ACTIONS] {
    let mut scores = *q_hybrid;
    if pav_enabled {
        for (score, &bias) in scores.iter_mut().zip(pav.q.row(s)) {
            *score += pav_weight * bias;
        }
    }
    scores
}

/// Max-stabilized Boltzmann distribution at temperature `tau`.
pub fn softmax_probs(scores: &[f64], tau: f64) -> Result<[f64; NUM_ACTIONS], PolicyError> {
    debug_assert_eq!(scores.len(), NUM_ACTIONS);
    if !(tau > 0.0) {
        return Err(PolicyError::NonPositiveTemperature(tau));
    }
    if let Some((index, &value)) = scores.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(PolicyError::NonFiniteScore { index, value });
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs = [0.0; NUM_ACTIONS];
    let mut total = 0.0;
    for (p, &s) in probs.iter_mut().zip(scores) {
        *p = ((s - max) / tau).exp();
        total += *p;
    }
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Inverse-CDF draw over the actions in their fixed order.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f64; NUM_ACTIONS], rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::from_index(i);
        }
    }
    // Rounding can leave the cumulative sum a hair under 1.
    let last = probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(NUM_ACTIONS - 1);
    Action::from_index(last)
}
