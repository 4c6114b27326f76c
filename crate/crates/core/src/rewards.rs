//! Instrumental and Pavlovian reward components, potential-based shaping,
//! and the per-episode pre-cue/post-cue phase.

use serde::{Deserialize, Serialize};

use crate::grid::CellKind;
use crate::learning::{StateId, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Subtracted whenever an agent's move fails.
    pub collision_penalty: f64,
    pub gate_reward: f64,
    pub gps_denied_penalty: f64,
    pub nlos_penalty: f64,
    /// Reward per dB of RSS above `rss_reference`.
    pub rss_scale: f64,
    /// dBm
    pub rss_reference: f64,
    pub terminal_bonus: f64,
    /// The Pavlovian critic does not bootstrap past a gate entry.
    pub gate_ends_cue_trial: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            collision_penalty: 2.0,
            gate_reward: 5.0,
            gps_denied_penalty: -5.0,
            nlos_penalty: -2.0,
            rss_scale: 0.01,
            rss_reference: -40.0,
            terminal_bonus: 20.0,
            gate_ends_cue_trial: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub instrumental: f64,
    pub pavlovian: f64,
    pub shaping: f64,
    pub total: f64,
}

impl RewardBreakdown {
    /// Reward seen by the instrumental learner: the instrumental term plus
    /// any shaping. Raw Pavlovian reward only feeds the Pavlovian critic.
    pub fn new(instrumental: f64, pavlovian: f64, shaping: f64) -> Self {
        Self {
            instrumental,
            pavlovian,
            shaping,
            total: instrumental + shaping,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    PreCue,
    PostCue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuePhase {
    pub phase: Phase,
    pub switch_step: Option<usize>,
}

impl Default for CuePhase {
    fn default() -> Self {
        Self {
            phase: Phase::PreCue,
            switch_step: None,
        }
    }
}

impl CuePhase {
    pub fn is_post_cue(&self) -> bool {
        self.phase == Phase::PostCue
    }
}

pub fn instrumental_reward(
    cfg: &RewardConfig,
    rss: f64,
    collided: bool,
    mission_done: bool,
) -> f64 {
    let mut r = cfg.rss_scale * (rss - cfg.rss_reference);
    if collided {
        r -= cfg.collision_penalty;
    }
    if mission_done {
        r += cfg.terminal_bonus;
    }
    r
}

/// Reward of the presented cue plus the NLOS penalty.
pub fn pavlovian_reward(cfg: &RewardConfig, cue: CellKind, los_to_target: bool) -> f64 {
    let mut r = match cue {
        CellKind::Gate => cfg.gate_reward,
        CellKind::GpsDenied => cfg.gps_denied_penalty,
        CellKind::Free | CellKind::Obstacle => 0.0,
    };
    if !los_to_target {
        r += cfg.nlos_penalty;
    }
    r
}

/// `gamma * phi(s') - phi(s)`; a terminal successor has zero potential.
pub fn shaping_reward(phi: &ValueTable, s: StateId, s_next: Option<StateId>, gamma: f64) -> f64 {
    gamma * s_next.map_or(0.0, |n| phi.get(n)) - phi.get(s)
}

/// Switches to the post-cue phase on the first cue entry and remembers the
/// step. The phase never reverts.
pub fn cue_phase_step(phase: CuePhase, entered_cue: bool, step: usize) -> CuePhase {
    if phase.phase == Phase::PreCue && entered_cue {
        CuePhase {
            phase: Phase::PostCue,
            switch_step: Some(step),
        }
    } else {
        phase
    }
}

pub fn is_cue(kind: CellKind) -> bool {
    matches!(kind, CellKind::Gate | CellKind::GpsDenied)
}
