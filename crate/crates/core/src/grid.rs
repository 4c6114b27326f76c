//! Discrete grid world: map parsing, joint motion with collision resolution,
//! and episode termination.
//!
//! Coordinates are `(x, y)` with `x` growing rightward and `y` growing
//! upward. The map text stores the highest row first.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rf::{line_of_sight, TerminationConfig, TerminationMode};

/// The scenario map bundled with the crate (36 x 24 cells, four agents).
pub const SCENARIO_MAP: &str = include_str!("../maps/scenario.map");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MapError {
    #[error("map document is empty")]
    Empty,
    #[error("line {line} has length {found}, expected {expected}")]
    NonRectangular {
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("unknown character {ch:?} at line {line}, column {column}")]
    UnknownChar {
        ch: char,
        line: usize,
        column: usize,
    },
    #[error("map must be at least 3x3, got {width}x{height}")]
    TooSmall { width: usize, height: usize },
    #[error("missing target cell 'T'")]
    MissingTarget,
    #[error("more than one target cell 'T'")]
    DuplicateTarget,
    #[error("agent digit {0} appears more than once")]
    DuplicateAgent(u8),
    #[error("agent labels must be contiguous from 1; label {0} is missing")]
    MissingAgentLabel(u8),
    #[error("map has no agent starts")]
    NoAgents,
    #[error("boundary cell ({x}, {y}) must be an obstacle")]
    OpenBoundary { x: i32, y: i32 },
    #[error("{what} at ({x}, {y}) sits on the obstacle boundary")]
    OnObstacle { what: &'static str, x: i32, y: i32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellKind {
    Free,
    Obstacle,
    Gate,
    GpsDenied,
}

impl CellKind {
    pub fn is_traversable(self) -> bool {
        !matches!(self, CellKind::Obstacle)
    }

    fn symbol(self) -> char {
        match self {
            CellKind::Free => '.',
            CellKind::Obstacle => '#',
            CellKind::Gate => 'G',
            CellKind::GpsDenied => 'D',
        }
    }
}

/// A grid cell position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub x: i32,
    pub y: i32,
}

impl Coord {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn chebyshev(self, other: Coord) -> i32 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }

    pub fn offset(self, dx: i32, dy: i32) -> Coord {
        Coord::new(self.x + dx, self.y + dy)
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// The five movement primitives. The discriminant is the action index used
/// by every table in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Hover = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; 5] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Hover,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Self::ALL[i]
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Hover => "hover",
        }
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (0, 1),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
            Action::Right => (1, 0),
            Action::Hover => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<CellKind>,
    agent_starts: Vec<Coord>,
    target: Coord,
    los_to_target: Vec<bool>,
}

impl GridMap {
    /// Parses a map document. See [`load_map`].
    pub fn parse(text: &str) -> Result<Self, MapError> {
        load_map(text)
    }

    /// The bundled scenario map.
    pub fn scenario() -> Self {
        load_map(SCENARIO_MAP).expect("bundled map is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn agent_starts(&self) -> &[Coord] {
        &self.agent_starts
    }

    pub fn target(&self) -> Coord {
        self.target
    }

    pub fn in_bounds(&self, c: Coord) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    /// Row-major state index, `y * width + x`.
    pub fn index(&self, c: Coord) -> usize {
        debug_assert!(self.in_bounds(c));
        c.y as usize * self.width + c.x as usize
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new((index % self.width) as i32, (index / self.width) as i32)
    }

    /// Kind of cell `c`; anything outside the grid reads as an obstacle.
    pub fn kind(&self, c: Coord) -> CellKind {
        if self.in_bounds(c) {
            self.cells[self.index(c)]
        } else {
            CellKind::Obstacle
        }
    }

    pub fn is_traversable(&self, c: Coord) -> bool {
        self.kind(c).is_traversable()
    }

    /// Line of sight from `c` to the target, precomputed at load time.
    pub fn has_los_to_target(&self, c: Coord) -> bool {
        self.los_to_target[self.index(c)]
    }

    pub fn cells_of_kind(&self, kind: CellKind) -> impl Iterator<Item = Coord> + '_ {
        (0..self.cells.len())
            .filter(move |&i| self.cells[i] == kind)
            .map(|i| self.coord(i))
    }

    /// Serializes back to the map document format, one LF-terminated row per
    /// line, highest `y` first.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in (0..self.height as i32).rev() {
            for x in 0..self.width as i32 {
                let c = Coord::new(x, y);
                let ch = if c == self.target {
                    'T'
                } else if let Some(k) = self.agent_starts.iter().position(|&s| s == c) {
                    char::from(b'1' + k as u8)
                } else {
                    self.kind(c).symbol()
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn initial_state(&self) -> EnvState {
        EnvState {
            agent_cells: self.agent_starts.clone(),
            step_index: 0,
        }
    }
}

/// Parses the ASCII map format: `#` obstacle, `.` free, `G` gate,
/// `D` GPS-denied, `T` target, `1`-`9` agent starts. The target and agent
/// starts sit on free cells.
pub fn load_map(text: &str) -> Result<GridMap, MapError> {
    let lines: Vec<&str> = text
        .strip_suffix('\n')
        .unwrap_or(text)
        .split('\n')
        .collect();
    if lines.is_empty() || lines[0].is_empty() {
        return Err(MapError::Empty);
    }
    let width = lines[0].chars().count();
    let height = lines.len();
    for (i, line) in lines.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(MapError::NonRectangular {
                line: i + 1,
                found,
                expected: width,
            });
        }
    }
    if width < 3 || height < 3 {
        return Err(MapError::TooSmall { width, height });
    }

    let mut cells = vec![CellKind::Free; width * height];
    let mut target = None;
    let mut agents: [Option<Coord>; 9] = [None; 9];
    for (row, line) in lines.iter().enumerate() {
        let y = (height - 1 - row) as i32;
        for (col, ch) in line.chars().enumerate() {
            let c = Coord::new(col as i32, y);
            let kind = match ch {
                '#' => CellKind::Obstacle,
                '.' => CellKind::Free,
                'G' => CellKind::Gate,
                'D' => CellKind::GpsDenied,
                'T' => {
                    if target.replace(c).is_some() {
                        return Err(MapError::DuplicateTarget);
                    }
                    CellKind::Free
                }
                '1'..='9' => {
                    let d = ch as u8 - b'0';
                    if agents[d as usize - 1].replace(c).is_some() {
                        return Err(MapError::DuplicateAgent(d));
                    }
                    CellKind::Free
                }
                _ => {
                    return Err(MapError::UnknownChar {
                        ch,
                        line: row + 1,
                        column: col + 1,
                    })
                }
            };
            cells[y as usize * width + col] = kind;
        }
    }
    let target = target.ok_or(MapError::MissingTarget)?;

    let n_agents = agents
        .iter()
        .rposition(Option::is_some)
        .map_or(0, |p| p + 1);
    if n_agents == 0 {
        return Err(MapError::NoAgents);
    }
    let mut agent_starts = Vec::with_capacity(n_agents);
    for (i, a) in agents[..n_agents].iter().enumerate() {
        agent_starts.push(a.ok_or(MapError::MissingAgentLabel(i as u8 + 1))?);
    }

    let on_boundary =
        |c: Coord| c.x == 0 || c.y == 0 || c.x == width as i32 - 1 || c.y == height as i32 - 1;
    if on_boundary(target) {
        return Err(MapError::OnObstacle {
            what: "target",
            x: target.x,
            y: target.y,
        });
    }
    if let Some(s) = agent_starts.iter().find(|&&s| on_boundary(s)) {
        return Err(MapError::OnObstacle {
            what: "agent start",
            x: s.x,
            y: s.y,
        });
    }
    for (i, &kind) in cells.iter().enumerate() {
        let c = Coord::new((i % width) as i32, (i / width) as i32);
        if on_boundary(c) && kind != CellKind::Obstacle {
            return Err(MapError::OpenBoundary { x: c.x, y: c.y });
        }
    }

    let mut map = GridMap {
        width,
        height,
        cells,
        agent_starts,
        target,
        los_to_target: Vec::new(),
    };
    map.los_to_target = (0..map.num_cells())
        .map(|i| line_of_sight(&map, map.coord(i), target))
        .collect();
    Ok(map)
}

/// Destination of `action` from `cell`, or `cell` itself when the move is
/// blocked by the boundary or an obstacle.
pub fn attempted_cell(map: &GridMap, cell: Coord, action: Action) -> Coord {
    let (dx, dy) = action.delta();
    let dest = cell.offset(dx, dy);
    if map.is_traversable(dest) {
        dest
    } else {
        cell
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    pub agent_cells: Vec<Coord>,
    pub step_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationCause {
    MissionAccomplished,
    StepLimit,
    None,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::MissionAccomplished => "mission_accomplished",
            TerminationCause::StepLimit => "step_limit",
            TerminationCause::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub collided: Vec<bool>,
    pub terminal: bool,
    pub termination_cause: TerminationCause,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("expected {expected} actions, got {found}")]
pub struct ActionCountMismatch {
    pub expected: usize,
    pub found: usize,
}

/// Moves all agents simultaneously.
///
/// An agent stays put and is flagged as collided when its move is blocked by
/// an obstacle, when it targets the same cell as another agent (including a
/// cell held by an agent that stays), or when it would swap cells with
/// another agent. Freezing is repeated until no conflicts remain, so the
/// result does not depend on agent order. Hovering is never a collision.
///
/// The returned outcome is never terminal; callers combine it with
/// [`is_terminal`].
pub fn apply_joint_action(
    map: &GridMap,
    state: &EnvState,
    actions: &[Action],
) -> Result<StepOutcome, ActionCountMismatch> {
    let n = state.agent_cells.len();
    if actions.len() != n {
        return Err(ActionCountMismatch {
            expected: n,
            found: actions.len(),
        });
    }
    let current = &state.agent_cells;
    let mut target: Vec<Coord> = Vec::with_capacity(n);
    let mut collided = vec![false; n];
    for i in 0..n {
        let dest = attempted_cell(map, current[i], actions[i]);
        if dest == current[i] && actions[i] != Action::Hover {
            collided[i] = true;
        }
        target.push(dest);
    }

    let mut to_freeze = Vec::new();
    loop {
        to_freeze.clear();
        for i in 0..n {
            if target[i] == current[i] {
                continue;
            }
            let conflict = (0..n).any(|j| {
                j != i
                    && (target[j] == target[i]
                        || (target[i] == current[j] && target[j] == current[i]))
            });
            if conflict {
                to_freeze.push(i);
            }
        }
        if to_freeze.is_empty() {
            break;
        }
        for &i in &to_freeze {
            target[i] = current[i];
            collided[i] = true;
        }
    }

    Ok(StepOutcome {
        next_state: EnvState {
            agent_cells: target,
            step_index: state.step_index + 1,
        },
        collided,
        terminal: false,
        termination_cause: TerminationCause::None,
    })
}

/// Number of agents within `range_cells` (Chebyshev) of the target and in
/// line of sight with it.
pub fn agents_in_range(map: &GridMap, cells: &[Coord], range_cells: u32) -> usize {
    let target = map.target();
    cells
        .iter()
        .filter(|&&c| c.chebyshev(target) <= range_cells as i32 && map.has_los_to_target(c))
        .count()
}

/// Mission and step-limit check. The mission takes precedence when both
/// hold on the same step. `peb_value` is ignored in proximity mode.
pub fn is_terminal(
    map: &GridMap,
    state: &EnvState,
    criterion: &TerminationConfig,
    peb_value: f64,
    max_steps: usize,
) -> (bool, TerminationCause) {
    let accomplished = match criterion.mode {
        TerminationMode::Peb => peb_value <= criterion.peb_threshold,
        TerminationMode::Proximity => {
            agents_in_range(map, &state.agent_cells, criterion.range_cells) >= criterion.min_agents
        }
    };
    if accomplished {
        (true, TerminationCause::MissionAccomplished)
    } else if state.step_index >= max_steps {
        (true, TerminationCause::StepLimit)
    } else {
        (false, TerminationCause::None)
    }
}
