//! Deterministic grid world with walls, a hand-coded arrow policy and
//! ε-greedy action selection.
//!
//! Map files hold two blocks separated by one blank line. The layout block
//! uses `#` wall, `.` open, `S` start, `G` goal. The policy block has the
//! same shape with `^ v < >` on every open non-goal cell, `#` on walls and
//! `G` on the goal. Trailing whitespace is ignored; any other glyph is an
//! error. Error locations are zero-based `(row, column)`.

use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default step cap per episode.
pub const DEFAULT_STEP_CAP: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

pub const ACTIONS: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

impl Action {
    fn glyph(self) -> char {
        match self {
            Action::Up => '^',
            Action::Down => 'v',
            Action::Left => '<',
            Action::Right => '>',
        }
    }

    fn from_glyph(c: char) -> Option<Self> {
        match c {
            '^' => Some(Action::Up),
            'v' => Some(Action::Down),
            '<' => Some(Action::Left),
            '>' => Some(Action::Right),
            _ => None,
        }
    }
}

/// Grid coordinate: `x` is the column, `y` the row (row 0 at the top).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridState {
    pub position: Cell,
    pub episode_step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: Cell,
    goal: Cell,
    policy: Vec<Option<Action>>,
    index: Vec<Option<usize>>,
    cells: Vec<Cell>,
}

impl GridMap {
    /// Parses and validates a map file.
    pub fn load(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).collect();
        let sep = lines
            .iter()
            .position(|l| l.is_empty())
            .ok_or_else(|| Error::map(lines.len(), 0, "missing blank line before policy block"))?;
        let layout = &lines[..sep];
        let mut end = lines.len();
        while end > sep + 1 && lines[end - 1].is_empty() {
            end -= 1;
        }
        let policy_rows = &lines[sep + 1..end];
        if layout.is_empty() {
            return Err(Error::map(0, 0, "empty layout block"));
        }
        if let Some(k) = policy_rows.iter().position(|l| l.is_empty()) {
            return Err(Error::map(k, 0, "unexpected blank line inside policy block"));
        }

        let width = layout[0].chars().count();
        let height = layout.len();
        if width == 0 {
            return Err(Error::map(0, 0, "empty layout row"));
        }
        let mut walls = vec![false; width * height];
        let mut start = None;
        let mut goal = None;
        for (y, row) in layout.iter().enumerate() {
            let n = row.chars().count();
            if n != width {
                return Err(Error::map(y, n.min(width), format!("ragged row: {n} cells, expected {width}")));
            }
            for (x, c) in row.chars().enumerate() {
                match c {
                    '#' => walls[y * width + x] = true,
                    '.' => {}
                    'S' if start.is_some() => return Err(Error::map(y, x, "duplicate start")),
                    'S' => start = Some(Cell::new(x, y)),
                    'G' if goal.is_some() => return Err(Error::map(y, x, "duplicate goal")),
                    'G' => goal = Some(Cell::new(x, y)),
                    other => return Err(Error::map(y, x, format!("unknown layout glyph {other:?}"))),
                }
            }
        }
        let start = start.ok_or_else(|| Error::map(0, 0, "missing start"))?;
        let goal = goal.ok_or_else(|| Error::map(0, 0, "missing goal"))?;

        if policy_rows.len() != height {
            return Err(Error::map(
                policy_rows.len().min(height),
                0,
                format!("policy block has {} rows, layout has {height}", policy_rows.len()),
            ));
        }
        let mut policy = vec![None; width * height];
        for (y, row) in policy_rows.iter().enumerate() {
            let n = row.chars().count();
            if n != width {
                return Err(Error::map(y, n.min(width), format!("ragged policy row: {n} cells, expected {width}")));
            }
            for (x, c) in row.chars().enumerate() {
                let i = y * width + x;
                let is_goal = goal == Cell::new(x, y);
                match (c, walls[i], is_goal) {
                    ('#', true, _) => {}
                    ('G', _, true) => {}
                    (c, false, false) if Action::from_glyph(c).is_some() => {
                        policy[i] = Action::from_glyph(c);
                    }
                    (c, _, _) if !matches!(c, '#' | 'G' | '^' | 'v' | '<' | '>') => {
                        return Err(Error::map(y, x, format!("unknown policy glyph {c:?}")));
                    }
                    (_, true, _) => return Err(Error::map(y, x, "policy glyph on a wall cell")),
                    (_, _, true) => return Err(Error::map(y, x, "goal cell must be marked 'G' in policy")),
                    (_, false, false) => {
                        return Err(Error::map(y, x, "open cell without policy arrow"))
                    }
                }
            }
        }

        let mut index = vec![None; width * height];
        let mut cells = Vec::new();
        for y in 0..height {
            for x in 0..width {
                if !walls[y * width + x] {
                    index[y * width + x] = Some(cells.len());
                    cells.push(Cell::new(x, y));
                }
            }
        }
        Ok(Self { width, height, walls, start, goal, policy, index, cells })
    }

    /// The bundled 13×13 maze used by default.
    pub fn dayan() -> Self {
        Self::load(include_str!("../maps/dayan13.map")).expect("bundled map is valid")
    }

    /// An all-open `width × height` map with the start at the bottom-left and
    /// the goal at the top-right; arrows point right, then up the last column.
    pub fn open(width: usize, height: usize) -> Result<Self> {
        if width * height < 2 {
            return Err(Error::invalid("open map needs at least two cells"));
        }
        let mut text = String::new();
        for y in 0..height {
            for x in 0..width {
                text.push(match (x, y) {
                    (0, y) if y == height - 1 => 'S',
                    (x, 0) if x == width - 1 => 'G',
                    _ => '.',
                });
            }
            text.push('\n');
        }
        text.push('\n');
        for y in 0..height {
            for x in 0..width {
                text.push(match (x, y) {
                    (x, 0) if x == width - 1 => 'G',
                    (x, _) if x == width - 1 => '^',
                    _ => '>',
                });
            }
            text.push('\n');
        }
        Self::load(&text)
    }

    /// Serializes back to the map file format.
    pub fn to_text(&self) -> String {
        let mut text = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = Cell::new(x, y);
                text.push(if self.walls[y * self.width + x] {
                    '#'
                } else if c == self.start {
                    'S'
                } else if c == self.goal {
                    'G'
                } else {
                    '.'
                });
            }
            text.push('\n');
        }
        text.push('\n');
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                text.push(if self.walls[i] {
                    '#'
                } else if Cell::new(x, y) == self.goal {
                    'G'
                } else {
                    self.policy[i].map_or('?', Action::glyph)
                });
            }
            text.push('\n');
        }
        text
    }

    /// Hex SHA-256 of the canonical map text.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goal(&self) -> Cell {
        self.goal
    }

    /// Number of open cells, goal included.
    pub fn state_count(&self) -> usize {
        self.cells.len()
    }

    pub fn state_index(&self, cell: Cell) -> Option<usize> {
        if cell.x >= self.width || cell.y >= self.height {
            return None;
        }
        self.index[cell.y * self.width + cell.x]
    }

    pub fn cell(&self, state: usize) -> Cell {
        self.cells[state]
    }

    pub fn goal_index(&self) -> usize {
        self.state_index(self.goal).expect("goal is open")
    }

    pub fn start_index(&self) -> usize {
        self.state_index(self.start).expect("start is open")
    }

    pub fn is_open(&self, cell: Cell) -> bool {
        self.state_index(cell).is_some()
    }

    pub fn policy_action(&self, cell: Cell) -> Option<Action> {
        self.policy.get(cell.y * self.width + cell.x).copied().flatten()
    }

    pub fn initial_state(&self) -> GridState {
        GridState { position: self.start, episode_step: 0 }
    }

    /// Destination of `action` from `cell`; walls and the grid edge block.
    pub fn destination(&self, cell: Cell, action: Action) -> Cell {
        let target = match action {
            Action::Up => cell.y.checked_sub(1).map(|y| Cell::new(cell.x, y)),
            Action::Down => Some(Cell::new(cell.x, cell.y + 1)),
            Action::Left => cell.x.checked_sub(1).map(|x| Cell::new(x, cell.y)),
            Action::Right => Some(Cell::new(cell.x + 1, cell.y)),
        };
        match target {
            Some(t) if self.is_open(t) => t,
            _ => cell,
        }
    }

    /// Applies `action`. Returns the next state and whether it is the goal.
    pub fn step(&self, state: GridState, action: Action) -> (GridState, bool) {
        let position = self.destination(state.position, action);
        let next = GridState { position, episode_step: state.episode_step + 1 };
        (next, position == self.goal)
    }

    /// ε-greedy over the arrow policy: with probability `ε` a uniform draw
    /// over all four actions (arrow included), otherwise the arrow.
    pub fn select_action<R: Rng + ?Sized>(&self, state: GridState, epsilon: f64, rng: &mut R) -> Action {
        let arrow = self.policy_action(state.position);
        match arrow {
            Some(a) if !(epsilon > 0.0 && rng.random::<f64>() < epsilon) => a,
            _ => ACTIONS[rng.random_range(0..ACTIONS.len())],
        }
    }

    /// Exact Markov chain induced by the ε-greedy policy over state indices.
    /// The goal row is all zeros.
    pub fn transition_matrix(&self, epsilon: f64) -> Result<DMatrix<f64>> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
        }
        let n = self.state_count();
        let goal = self.goal_index();
        let mut p = DMatrix::zeros(n, n);
        for s in 0..n {
            if s == goal {
                continue;
            }
            let cell = self.cells[s];
            let arrow = self.policy_action(cell).expect("open non-goal cell has an arrow");
            for a in ACTIONS {
                let prob = epsilon / 4.0 + if a == arrow { 1.0 - epsilon } else { 0.0 };
                if prob > 0.0 {
                    let next = self.state_index(self.destination(cell, a)).expect("open");
                    p[(s, next)] += prob;
                }
            }
        }
        Ok(p)
    }

    /// Runs one episode from the start state, calling `visit` on every
    /// transition. Stops at the goal or after `step_cap` steps.
    pub fn rollout<R, F>(&self, epsilon: f64, step_cap: u64, rng: &mut R, mut visit: F) -> Result<EpisodeOutcome>
    where
        R: Rng + ?Sized,
        F: FnMut(&StepRecord) -> Result<()>,
    {
        let mut state = self.initial_state();
        let mut s = self.start_index();
        while state.episode_step < step_cap {
            let action = self.select_action(state, epsilon, rng);
            let (next, terminal) = self.step(state, action);
            let n = self.state_index(next.position).expect("open");
            visit(&StepRecord { state: s, next: n, action, terminal })?;
            state = next;
            s = n;
            if terminal {
                return Ok(EpisodeOutcome { steps: state.episode_step, truncated: false });
            }
        }
        Ok(EpisodeOutcome { steps: state.episode_step, truncated: true })
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// One transition of a rollout, in state indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepRecord {
    pub state: usize,
    pub next: usize,
    pub action: Action,
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeOutcome {
    pub steps: u64,
    /// The step cap was hit before the goal.
    pub truncated: bool,
}
