//! Training orchestration: the four learning conditions, the per-step
//! learning loop, seeded Monte Carlo runs and the artifacts derived from a
//! trained run (Pavlovian fields and greedy rollouts).

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::grid::{
    apply_joint_action, is_terminal, Action, CellKind, Coord, EnvState, GridMap, TerminationCause,
};
use crate::learning::{
    arbitration_update, argmax, dyna_observe, dyna_plan, hybrid_q, one_step_update,
    pavlovian_update, q_learning_update, sarsa_update, state_prediction_error, ArbitrationState,
    DynaModel, EligibilityTraces, PavlovianTable, QTable, StateId, NUM_ACTIONS,
};
use crate::policy::{action_scores, sample_action, softmax_probs, PolicyError};
use crate::rewards::{
    cue_phase_step, instrumental_reward, is_cue, pavlovian_reward, shaping_reward, CuePhase,
};
use crate::rf::{gps_estimate, RadioField, TerminationMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    InstrumentalOnly,
    PavlovianInstrumental,
    InstrumentalModelBased,
    FullHybrid,
}

impl Condition {
    pub const ALL: [Condition; 4] = [
        Condition::InstrumentalOnly,
        Condition::PavlovianInstrumental,
        Condition::InstrumentalModelBased,
        Condition::FullHybrid,
    ];

    /// Pavlovian critic, bias and cue phases.
    pub fn pavlovian(self) -> bool {
        matches!(
            self,
            Condition::PavlovianInstrumental | Condition::FullHybrid
        )
    }

    /// Dyna planning and arbitration.
    pub fn model_based(self) -> bool {
        matches!(
            self,
            Condition::InstrumentalModelBased | Condition::FullHybrid
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::InstrumentalOnly => "instrumental_only",
            Condition::PavlovianInstrumental => "pavlovian_instrumental",
            Condition::InstrumentalModelBased => "instrumental_model_based",
            Condition::FullHybrid => "full_hybrid",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

/// Map plus the per-cell radio quantities it implies.
#[derive(Debug, Clone)]
pub struct Environment {
    pub map: GridMap,
    pub field: RadioField,
}

impl Environment {
    pub fn new(map: GridMap, cfg: &RunConfig) -> Self {
        let field = RadioField::new(&map, &cfg.link);
        Self { map, field }
    }

    pub fn num_agents(&self) -> usize {
        self.map.agent_starts().len()
    }
}

/// Everything one agent learns. Tables belonging to inactive systems stay
/// untouched for the whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTables {
    pub q_mf: QTable,
    pub q_mb: QTable,
    pub pav: PavlovianTable,
    pub model: DynaModel,
    pub arbitration: ArbitrationState,
}

impl AgentTables {
    pub fn new(num_states: usize, cfg: &RunConfig) -> Self {
        let mut arbitration = ArbitrationState::new(cfg.hyper.ema_decay, cfg.hyper.sharpness);
        if !cfg.condition.model_based() {
            arbitration.p_mb = 0.0;
        }
        Self {
            q_mf: QTable::new(num_states),
            q_mb: QTable::new(num_states),
            pav: PavlovianTable::new(num_states),
            model: DynaModel::new(num_states),
            arbitration,
        }
    }

    /// Final action scores of `condition` at state `s`.
    pub fn scores(&self, condition: Condition, pav_weight: f64, s: StateId) -> [f64; NUM_ACTIONS] {
        let hybrid = if condition.model_based() {
            hybrid_q(&self.q_mf, &self.q_mb, self.arbitration.p_mb, s)
        } else {
            let mut row = [0.0; NUM_ACTIONS];
            row.copy_from_slice(self.q_mf.row(s));
            row
        };
        action_scores(&hybrid, &self.pav, s, pav_weight, condition.pavlovian())
    }
}

/// Independent random streams of one agent, split from the run seed.
#[derive(Debug, Clone)]
pub struct AgentStreams {
    pub action: ChaCha8Rng,
    pub planning: ChaCha8Rng,
    pub gps: ChaCha8Rng,
}

impl AgentStreams {
    pub fn new(run_seed: u64, agent: usize) -> Self {
        let stream = |k: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            rng.set_stream(agent as u64 * 3 + k);
            rng
        };
        Self {
            action: stream(0),
            planning: stream(1),
            gps: stream(2),
        }
    }
}

/// A learning agent: its tables plus the per-run mutable machinery.
#[derive(Debug, Clone)]
pub struct Agent {
    pub tables: AgentTables,
    pub streams: AgentStreams,
    traces: EligibilityTraces,
    phase: CuePhase,
}

impl Agent {
    pub fn new(num_states: usize, cfg: &RunConfig, run_seed: u64, index: usize) -> Self {
        Self {
            tables: AgentTables::new(num_states, cfg),
            streams: AgentStreams::new(run_seed, index),
            traces: EligibilityTraces::new(num_states),
            phase: CuePhase::default(),
        }
    }

    pub fn phase(&self) -> CuePhase {
        self.phase
    }
}

pub fn make_agents(env: &Environment, cfg: &RunConfig, run_seed: u64) -> Vec<Agent> {
    (0..env.num_agents())
        .map(|i| Agent::new(env.map.num_cells(), cfg, run_seed, i))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// 1-based.
    pub episode: usize,
    pub steps_taken: usize,
    pub termination_cause: TerminationCause,
    pub instrumental_reward: Vec<f64>,
    pub pavlovian_reward: Vec<f64>,
    pub collisions: Vec<usize>,
    /// Mean arbitration weight over agents and steps; only with arbitration.
    pub p_mb_mean: Option<f64>,
    /// Mean GPS position error over steps spent in denied cells (meters).
    pub gps_error_mean: Option<f64>,
}

impl EpisodeMetrics {
    pub fn total_collisions(&self) -> usize {
        self.collisions.iter().sum()
    }
}

/// What happened in one environment step, for tracing and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub cells_before: Vec<Coord>,
    pub scores: Vec<[f64; NUM_ACTIONS]>,
    pub actions: Vec<Action>,
    pub cells_after: Vec<Coord>,
    pub collided: Vec<bool>,
    pub termination_cause: TerminationCause,
}

struct PendingSarsa {
    s: StateId,
    a: usize,
    reward: f64,
    spe: Option<f64>,
}

/// One episode, advanced a step at a time.
pub struct Episode<'a> {
    env: &'a Environment,
    cfg: &'a RunConfig,
    agents: &'a mut [Agent],
    alpha: f64,
    tau: f64,
    state: EnvState,
    pending: Vec<Option<PendingSarsa>>,
    metrics: EpisodeMetrics,
    p_mb_sum: f64,
    p_mb_count: usize,
    gps_err_sum: f64,
    gps_err_count: usize,
    done: bool,
}

impl<'a> Episode<'a> {
    /// Prepares episode `episode_index` (0-based): schedules are evaluated
    /// once here and held for the whole episode.
    pub fn new(
        env: &'a Environment,
        cfg: &'a RunConfig,
        agents: &'a mut [Agent],
        episode_index: usize,
    ) -> Self {
        let n = agents.len();
        for agent in agents.iter_mut() {
            if !(cfg.persist_cue_phase && agent.phase.is_post_cue()) {
                agent.phase = CuePhase::default();
                agent.traces.deactivate();
            } else {
                agent.traces.activate();
            }
        }
        let state = env.map.initial_state();
        let mut ep = Self {
            env,
            cfg,
            agents,
            alpha: cfg.hyper.alpha.value(episode_index),
            tau: cfg.policy.temperature.value(episode_index),
            state,
            pending: (0..n).map(|_| None).collect(),
            metrics: EpisodeMetrics {
                episode: episode_index + 1,
                steps_taken: 0,
                termination_cause: TerminationCause::None,
                instrumental_reward: vec![0.0; n],
                pavlovian_reward: vec![0.0; n],
                collisions: vec![0; n],
                p_mb_mean: None,
                gps_error_mean: None,
            },
            p_mb_sum: 0.0,
            p_mb_count: 0,
            gps_err_sum: 0.0,
            gps_err_count: 0,
            done: false,
        };
        let peb = ep.current_peb();
        let (terminal, cause) =
            is_terminal(&env.map, &ep.state, &cfg.termination, peb, cfg.max_steps);
        if terminal {
            ep.done = true;
            ep.metrics.termination_cause = cause;
        }
        ep
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn temperature(&self) -> f64 {
        self.tau
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn current_peb(&self) -> f64 {
        match self.cfg.termination.mode {
            TerminationMode::Peb => self
                .env
                .field
                .peb(
                    &self.state.agent_cells,
                    self.cfg.termination.rss_noise_sigma,
                )
                .unwrap_or(f64::INFINITY),
            TerminationMode::Proximity => f64::INFINITY,
        }
    }

    /// Executes one joint step. Returns `None` once the episode has ended.
    pub fn step(&mut self) -> Result<Option<StepRecord>, ExperimentError> {
        if self.done {
            return Ok(None);
        }
        let cfg = self.cfg;
        let env = self.env;
        let map = &env.map;
        let condition = cfg.condition;
        let (gamma, lambda) = (cfg.hyper.gamma, cfg.hyper.trace_lambda);
        let alpha = self.alpha;
        let n = self.agents.len();

        let cells_before = self.state.agent_cells.clone();
        let mut scores = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let s = map.index(cells_before[i]);
            let sc = agent.tables.scores(condition, cfg.policy.pav_weight, s);
            let probs = softmax_probs(&sc, self.tau)?;
            let a = sample_action(&probs, &mut agent.streams.action);
            scores.push(sc);
            actions.push(a);

            // Deferred on-policy update now that the next action is known.
            if let Some(p) = self.pending[i].take() {
                let rpe = sarsa_update(
                    &mut agent.tables.q_mf,
                    &mut agent.traces,
                    p.s,
                    p.a,
                    p.reward,
                    Some((s, a.index())),
                    alpha,
                    gamma,
                    lambda,
                );
                if let Some(spe) = p.spe {
                    arbitration_update(&mut agent.tables.arbitration, rpe, spe);
                }
            }
        }

        let outcome = apply_joint_action(map, &self.state, &actions)
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        self.state = outcome.next_state;
        let peb = self.current_peb();
        let (terminal, cause) = is_terminal(map, &self.state, &cfg.termination, peb, cfg.max_steps);
        let mission = cause == TerminationCause::MissionAccomplished;

        for (i, agent) in self.agents.iter_mut().enumerate() {
            let before = cells_before[i];
            let after = self.state.agent_cells[i];
            let s = map.index(before);
            let a = actions[i].index();
            let s_after = map.index(after);
            let next = if mission { None } else { Some(s_after) };
            let collided = outcome.collided[i];
            let kind_after = map.kind(after);
            let entered = if after != before {
                kind_after
            } else {
                CellKind::Free
            };

            let r_inst = instrumental_reward(&cfg.rewards, env.field.rss(after), collided, mission);
            // The cue of the occupied cell is presented on every step spent there.
            let presented = map.kind(before);
            let r_pav = pavlovian_reward(&cfg.rewards, presented, env.field.los(before));
            self.metrics.instrumental_reward[i] += r_inst;
            self.metrics.pavlovian_reward[i] += r_pav;
            if collided {
                self.metrics.collisions[i] += 1;
            }

            let tables = &mut agent.tables;
            let post_cue = condition.pavlovian() && agent.phase.is_post_cue();
            // The shaping potential is read before this step's critic update.
            let shaping = if post_cue && cfg.shaping {
                shaping_reward(&tables.pav.v, s, next, gamma)
            } else {
                0.0
            };
            let reward = r_inst + shaping;
            if condition.pavlovian() {
                let pav_next = if presented == CellKind::Gate && cfg.rewards.gate_ends_cue_trial {
                    None
                } else {
                    next
                };
                pavlovian_update(&mut tables.pav, s, a, r_pav, pav_next, alpha, gamma);
            }

            let spe = if condition.model_based() {
                let spe = state_prediction_error(&tables.model, s, a, next);
                dyna_observe(&mut tables.model, s, a, r_inst, next);
                q_learning_update(&mut tables.q_mb, s, a, r_inst, next, alpha, gamma);
                dyna_plan(
                    &tables.model,
                    &mut tables.q_mb,
                    cfg.hyper.planning_steps,
                    alpha,
                    gamma,
                    &mut agent.streams.planning,
                );
                Some(spe)
            } else {
                None
            };

            let rpe = if post_cue {
                if mission {
                    Some(sarsa_update(
                        &mut tables.q_mf,
                        &mut agent.traces,
                        s,
                        a,
                        reward,
                        None,
                        alpha,
                        gamma,
                        lambda,
                    ))
                } else {
                    self.pending[i] = Some(PendingSarsa { s, a, reward, spe });
                    None
                }
            } else if condition.pavlovian() && cfg.biased_bootstrap {
                let target = next.map(|n| {
                    (
                        n,
                        argmax(&tables.scores(condition, cfg.policy.pav_weight, n)),
                    )
                });
                Some(one_step_update(
                    &mut tables.q_mf,
                    s,
                    a,
                    r_inst,
                    target,
                    alpha,
                    gamma,
                ))
            } else {
                Some(q_learning_update(
                    &mut tables.q_mf,
                    s,
                    a,
                    r_inst,
                    next,
                    alpha,
                    gamma,
                ))
            };
            if let (Some(rpe), Some(spe)) = (rpe, spe) {
                arbitration_update(&mut tables.arbitration, rpe, spe);
            }

            if condition.pavlovian() && !post_cue && is_cue(entered) {
                agent.phase = cue_phase_step(agent.phase, true, self.state.step_index);
                agent.traces.activate();
            }

            if condition.model_based() {
                self.p_mb_sum += tables.arbitration.p_mb;
                self.p_mb_count += 1;
            }

            if kind_after == CellKind::GpsDenied {
                let truth = (f64::from(after.x), f64::from(after.y));
                let est = gps_estimate(truth, true, &cfg.gps, &mut agent.streams.gps);
                self.gps_err_sum += ((est.0 - truth.0).powi(2) + (est.1 - truth.1).powi(2)).sqrt();
                self.gps_err_count += 1;
            }
        }

        if terminal {
            if !mission {
                self.flush_pending_greedy();
            }
            self.done = true;
        }
        self.metrics.steps_taken = self.state.step_index;
        self.metrics.termination_cause = cause;

        Ok(Some(StepRecord {
            cells_before,
            scores,
            actions,
            cells_after: self.state.agent_cells.clone(),
            collided: outcome.collided,
            termination_cause: cause,
        }))
    }

    /// Resolves deferred SARSA updates at truncation with the greedy action
    /// at the final state, without consuming randomness.
    fn flush_pending_greedy(&mut self) {
        let cfg = self.cfg;
        for (i, agent) in self.agents.iter_mut().enumerate() {
            if let Some(p) = self.pending[i].take() {
                let s = self.env.map.index(self.state.agent_cells[i]);
                let a = argmax(&agent.tables.scores(cfg.condition, cfg.policy.pav_weight, s));
                let rpe = sarsa_update(
                    &mut agent.tables.q_mf,
                    &mut agent.traces,
                    p.s,
                    p.a,
                    p.reward,
                    Some((s, a)),
                    self.alpha,
                    cfg.hyper.gamma,
                    cfg.hyper.trace_lambda,
                );
                if let Some(spe) = p.spe {
                    arbitration_update(&mut agent.tables.arbitration, rpe, spe);
                }
            }
        }
    }

    /// Runs to the end and returns the episode's metrics.
    pub fn finish(mut self) -> Result<EpisodeMetrics, ExperimentError> {
        while self.step()?.is_some() {}
        let mut m = self.metrics;
        if self.p_mb_count > 0 {
            m.p_mb_mean = Some(self.p_mb_sum / self.p_mb_count as f64);
        }
        if self.gps_err_count > 0 {
            m.gps_error_mean = Some(self.gps_err_sum / self.gps_err_count as f64);
        }
        Ok(m)
    }
}

pub fn run_episode(
    env: &Environment,
    cfg: &RunConfig,
    agents: &mut [Agent],
    episode_index: usize,
) -> Result<EpisodeMetrics, ExperimentError> {
    Episode::new(env, cfg, agents, episode_index).finish()
}

/// Pavlovian state potential of one agent as a `height x width` matrix
/// indexed `[y][x]`; obstacle cells are `None`.
pub fn pavlovian_field_snapshot(map: &GridMap, pav: &PavlovianTable) -> Vec<Vec<Option<f64>>> {
    (0..map.height() as i32)
        .map(|y| {
            (0..map.width() as i32)
                .map(|x| {
                    let c = Coord::new(x, y);
                    map.is_traversable(c).then(|| pav.v.get(map.index(c)))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSnapshot {
    /// 1-based episode after which the field was captured.
    pub episode: usize,
    pub agent: usize,
    pub field: Vec<Vec<Option<f64>>>,
}

/// Greedy roll-out of a single agent alone on the map. Stops when the agent
/// is within the proximity range of the target with line of sight, when it
/// stops moving, or after `max_steps` moves.
pub fn greedy_trajectory(
    map: &GridMap,
    tables: &AgentTables,
    condition: Condition,
    pav_weight: f64,
    start: Coord,
    range_cells: u32,
    max_steps: usize,
) -> Vec<Coord> {
    let mut path = vec![start];
    let mut cell = start;
    let in_range =
        |c: Coord| c.chebyshev(map.target()) <= range_cells as i32 && map.has_los_to_target(c);
    for _ in 0..max_steps {
        if in_range(cell) {
            break;
        }
        let s = map.index(cell);
        let a = Action::from_index(argmax(&tables.scores(condition, pav_weight, s)));
        let next = crate::grid::attempted_cell(map, cell, a);
        if next == cell {
            break;
        }
        cell = next;
        path.push(cell);
    }
    path
}

/// Joint greedy roll-out of all agents under the run's termination rule.
/// Stops at termination, after `max_steps` steps, or when no agent moves.
pub fn greedy_rollout(
    env: &Environment,
    cfg: &RunConfig,
    tables: &[AgentTables],
) -> Vec<Vec<Coord>> {
    let map = &env.map;
    let mut state = map.initial_state();
    let mut paths: Vec<Vec<Coord>> = state.agent_cells.iter().map(|&c| vec![c]).collect();
    let peb = |st: &EnvState| match cfg.termination.mode {
        TerminationMode::Peb => env
            .field
            .peb(&st.agent_cells, cfg.termination.rss_noise_sigma)
            .unwrap_or(f64::INFINITY),
        TerminationMode::Proximity => f64::INFINITY,
    };
    while !is_terminal(map, &state, &cfg.termination, peb(&state), cfg.max_steps).0 {
        let actions: Vec<Action> = state
            .agent_cells
            .iter()
            .zip(tables)
            .map(|(&c, t)| {
                Action::from_index(argmax(&t.scores(
                    cfg.condition,
                    cfg.policy.pav_weight,
                    map.index(c),
                )))
            })
            .collect();
        let out = apply_joint_action(map, &state, &actions).expect("one action per agent");
        if out.next_state.agent_cells == state.agent_cells {
            break;
        }
        state = out.next_state;
        for (p, &c) in paths.iter_mut().zip(&state.agent_cells) {
            p.push(c);
        }
    }
    paths
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub seed: u64,
    pub metrics: Vec<EpisodeMetrics>,
    pub snapshots: Vec<FieldSnapshot>,
    pub tables: Vec<AgentTables>,
    pub trajectories: Vec<Vec<Coord>>,
}

impl TrainingResult {
    pub fn steps(&self) -> Vec<usize> {
        self.metrics.iter().map(|m| m.steps_taken).collect()
    }
}

/// Trains one run from scratch with `seed`, advancing the schedules once
/// per episode.
pub fn run_training(
    env: &Environment,
    cfg: &RunConfig,
    seed: u64,
) -> Result<TrainingResult, ExperimentError> {
    let mut agents = make_agents(env, cfg, seed);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut snapshots = Vec::new();
    for e in 0..cfg.episodes {
        metrics.push(run_episode(env, cfg, &mut agents, e)?);
        if cfg.snapshot_episodes.contains(&(e + 1)) {
            for (k, agent) in agents.iter().enumerate() {
                snapshots.push(FieldSnapshot {
                    episode: e + 1,
                    agent: k,
                    field: pavlovian_field_snapshot(&env.map, &agent.tables.pav),
                });
            }
        }
    }
    let tables: Vec<AgentTables> = agents.into_iter().map(|a| a.tables).collect();
    let trajectories = greedy_rollout(env, cfg, &tables);
    Ok(TrainingResult {
        seed,
        metrics,
        snapshots,
        tables,
        trajectories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAggregate {
    pub episode: usize,
    pub mean_steps: f64,
    pub std_steps: f64,
    /// Fraction of runs whose episode ended with the mission accomplished.
    pub success_rate: f64,
    pub mean_p_mb: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub condition: Condition,
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeAggregate>,
    /// `steps_taken` per run (outer) and episode (inner), in seed order.
    pub run_steps: Vec<Vec<usize>>,
}

impl AggregateMetrics {
    pub fn mean_curve(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.mean_steps).collect()
    }
}

/// Per-run summary kept by the Monte Carlo harness.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Mean and population standard deviation of each episode across runs.
/// Runs are reduced in the order given, which is seed order.
pub fn aggregate(condition: Condition, runs: &[RunSummary]) -> AggregateMetrics {
    let n_runs = runs.len() as f64;
    let n_ep = runs.first().map_or(0, |r| r.metrics.len());
    let episodes = (0..n_ep)
        .map(|e| {
            let steps: Vec<f64> = runs
                .iter()
                .map(|r| r.metrics[e].steps_taken as f64)
                .collect();
            let mean = steps.iter().sum::<f64>() / n_runs;
            let var = steps.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n_runs;
            let success = runs
                .iter()
                .filter(|r| r.metrics[e].termination_cause == TerminationCause::MissionAccomplished)
                .count() as f64
                / n_runs;
            let p: Vec<f64> = runs.iter().filter_map(|r| r.metrics[e].p_mb_mean).collect();
            EpisodeAggregate {
                episode: e + 1,
                mean_steps: mean,
                std_steps: var.sqrt(),
                success_rate: success,
                mean_p_mb: (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64),
            }
        })
        .collect();
    AggregateMetrics {
        condition,
        seeds: runs.iter().map(|r| r.seed).collect(),
        episodes,
        run_steps: runs
            .iter()
            .map(|r| r.metrics.iter().map(|m| m.steps_taken).collect())
            .collect(),
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub aggregate: AggregateMetrics,
    /// The full result of the first run (seed `base_seed`).
    pub representative: TrainingResult,
}

/// Runs `monte_carlo_runs` independent trainings in parallel, run `r`
/// seeded with `base_seed + r`.
pub fn run_monte_carlo(
    env: &Environment,
    cfg: &RunConfig,
) -> Result<MonteCarloResult, ExperimentError> {
    let results: Vec<Result<(RunSummary, Option<TrainingResult>), ExperimentError>> = (0..cfg
        .monte_carlo_runs)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.base_seed.wrapping_add(r as u64);
            let res = run_training(env, cfg, seed)?;
            let summary = RunSummary {
                seed,
                metrics: res.metrics.clone(),
            };
            Ok((summary, (r == 0).then_some(res)))
        })
        .collect();
    let mut summaries = Vec::with_capacity(results.len());
    let mut representative = None;
    for r in results {
        let (s, full) = r?;
        summaries.push(s);
        if full.is_some() {
            representative = full;
        }
    }
    Ok(MonteCarloResult {
        aggregate: aggregate(cfg.condition, &summaries),
        representative: representative.expect("at least one run"),
    })
}

/// Trailing moving average; entry `i` averages episodes `i+1-window..=i`
/// (fewer at the start).
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for i in 0..series.len() {
        acc += series[i];
        if i >= window {
            acc -= series[i - window];
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// First 1-based episode at which the trailing `window`-episode mean of
/// `steps` drops below `threshold`. Only full windows count.
pub fn episodes_to_criterion(steps: &[usize], threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    if steps.len() < window {
        return None;
    }
    let mut acc: usize = steps[..window].iter().sum();
    if (acc as f64 / window as f64) < threshold {
        return Some(window);
    }
    for e in window..steps.len() {
        acc = acc + steps[e] - steps[e - window];
        if (acc as f64 / window as f64) < threshold {
            return Some(e + 1);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(condition: Condition) -> RunConfig {
        RunConfig {
            episodes: 3,
            max_steps: 60,
            monte_carlo_runs: 2,
            condition,
            snapshot_episodes: vec![1],
            ..RunConfig::default()
        }
    }

    #[test]
    fn zero_step_budget_ends_immediately() {
        let env = Environment::new(GridMap::scenario(), &RunConfig::default());
        let mut cfg = small_cfg(Condition::FullHybrid);
        cfg.max_steps = 0;
        let mut agents = make_agents(&env, &cfg, 3);
        let before: Vec<AgentTables> = agents.iter().map(|a| a.tables.clone()).collect();
        let m = run_episode(&env, &cfg, &mut agents, 0).unwrap();
        assert_eq!(m.steps_taken, 0);
        assert_eq!(m.termination_cause, TerminationCause::StepLimit);
        let after: Vec<AgentTables> = agents.into_iter().map(|a| a.tables).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn condition_flags() {
        use Condition::*;
        assert!(!InstrumentalOnly.pavlovian() && !InstrumentalOnly.model_based());
        assert!(PavlovianInstrumental.pavlovian() && !PavlovianInstrumental.model_based());
        assert!(!InstrumentalModelBased.pavlovian() && InstrumentalModelBased.model_based());
        assert!(FullHybrid.pavlovian() && FullHybrid.model_based());
        for c in Condition::ALL {
            assert_eq!(c.as_str().parse::<Condition>(), Ok(c));
        }
    }

    #[test]
    fn instrumental_only_leaves_other_systems_untouched() {
        let env = Environment::new(GridMap::scenario(), &RunConfig::default());
        let cfg = small_cfg(Condition::InstrumentalOnly);
        let res = run_training(&env, &cfg, 5).unwrap();
        for t in &res.tables {
            assert!(t.pav.is_all_zero());
            assert!(t.model.is_empty());
            assert!(t.q_mb.is_all_zero());
            assert!(!t.q_mf.is_all_zero());
        }
        assert!(res.metrics.iter().all(|m| m.p_mb_mean.is_none()));
    }

    #[test]
    fn arbitration_metrics_only_when_active() {
        let env = Environment::new(GridMap::scenario(), &RunConfig::default());
        let cfg = small_cfg(Condition::InstrumentalModelBased);
        let res = run_training(&env, &cfg, 5).unwrap();
        assert!(res.metrics.iter().all(|m| m.p_mb_mean.is_some()));
    }

    #[test]
    fn one_episode_one_row_one_snapshot_set() {
        let env = Environment::new(GridMap::scenario(), &RunConfig::default());
        let mut cfg = small_cfg(Condition::PavlovianInstrumental);
        cfg.episodes = 1;
        let res = run_training(&env, &cfg, 9).unwrap();
        assert_eq!(res.metrics.len(), 1);
        assert_eq!(res.snapshots.len(), env.num_agents());
        assert!(res.snapshots.iter().all(|s| s.episode == 1));
    }

    #[test]
    fn schedules_are_per_episode() {
        let env = Environment::new(GridMap::scenario(), &RunConfig::default());
        let cfg = small_cfg(Condition::FullHybrid);
        let mut agents = make_agents(&env, &cfg, 1);
        for e in [0usize, 1, 7, 2399] {
            let mut ep = Episode::new(&env, &cfg, &mut agents, e);
            assert_eq!(ep.alpha(), cfg.hyper.alpha.value(e));
            ep.step().unwrap();
            assert_eq!(ep.alpha(), cfg.hyper.alpha.value(e));
            assert_eq!(ep.temperature(), cfg.policy.temperature.value(e));
        }
    }

    #[test]
    fn untrained_field_is_zero_and_sized() {
        let map = GridMap::scenario();
        let pav = PavlovianTable::new(map.num_cells());
        let f = pavlovian_field_snapshot(&map, &pav);
        assert_eq!(f.len(), map.height());
        assert!(f.iter().all(|row| row.len() == map.width()));
        assert!(f.iter().flatten().flatten().all(|&v| v == 0.0));
        assert_eq!(f[0][0], None);
    }

    #[test]
    fn zero_tables_roll_up_until_blocked() {
        let map = GridMap::scenario();
        let cfg = RunConfig::default();
        let tables = AgentTables::new(map.num_cells(), &cfg);
        let start = map.agent_starts()[0];
        let path = greedy_trajectory(&map, &tables, Condition::FullHybrid, 1.0, start, 5, 800);
        assert!(path.len() > 1);
        for w in path.windows(2) {
            assert_eq!(w[1], w[0].offset(0, 1));
        }
        let last = *path.last().unwrap();
        assert!(!map.is_traversable(last.offset(0, 1)));
        assert!(path.len() - 1 <= 800);
    }

    #[test]
    fn aggregation_of_a_single_run() {
        let runs = [RunSummary {
            seed: 1,
            metrics: (0..3)
                .map(|e| EpisodeMetrics {
                    episode: e + 1,
                    steps_taken: 10 * (e + 1),
                    termination_cause: TerminationCause::StepLimit,
                    instrumental_reward: vec![],
                    pavlovian_reward: vec![],
                    collisions: vec![],
                    p_mb_mean: None,
                    gps_error_mean: None,
                })
                .collect(),
        }];
        let agg = aggregate(Condition::InstrumentalOnly, &runs);
        assert_eq!(agg.mean_curve(), vec![10.0, 20.0, 30.0]);
        assert!(agg.episodes.iter().all(|e| e.std_steps == 0.0));
    }

    #[test]
    fn moving_average_and_criterion() {
        assert_eq!(
            moving_average(&[2.0, 4.0, 6.0, 8.0], 2),
            vec![2.0, 3.0, 5.0, 7.0]
        );
        let steps = [800, 800, 800, 300, 300, 100, 100];
        assert_eq!(episodes_to_criterion(&steps, 400.0, 2), Some(5));
        assert_eq!(episodes_to_criterion(&steps, 400.0, 1), Some(4));
        assert_eq!(episodes_to_criterion(&steps, 50.0, 2), None);
        assert_eq!(episodes_to_criterion(&steps[..1], 900.0, 2), None);
    }
}
