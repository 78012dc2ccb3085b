//! Deterministic gridworlds: the reward-free Dark Chamber and the sparse
//! reward Four Rooms maze, plus visit-density bookkeeping.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::Write;
use std::path::Path;

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const LEVEL_EMPTY: f64 = 0.0;
pub const LEVEL_WALL: f64 = 0.33;
pub const LEVEL_GOAL: f64 = 0.66;
pub const LEVEL_AGENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Static description of a gridworld.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub walls: BTreeSet<Cell>,
    pub start: Cell,
    #[serde(default)]
    pub goal: Option<Cell>,
    #[serde(default)]
    pub goal_reward: f64,
    pub max_episode_steps: u32,
}

const FOUR_ROOMS: [&str; 13] = [
    "#############",
    "#     #    S#",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "## ####     #",
    "#     ### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#G    #     #",
    "#############",
];

impl GridSpec {
    /// 50x50 open room, no reward, agent starts bottom-left.
    pub fn dark_chamber() -> Self {
        Self::open_room(50, 50)
    }

    pub fn open_room(height: usize, width: usize) -> Self {
        GridSpec {
            height,
            width,
            walls: BTreeSet::new(),
            start: Cell::new(height.saturating_sub(1), 0),
            goal: None,
            goal_reward: 0.0,
            max_episode_steps: 500,
        }
    }

    /// Classic 13x13 four-rooms maze. Start top-right, goal bottom-left,
    /// reward 1 on reaching the goal.
    pub fn four_rooms() -> Self {
        let mut spec = Self::from_layout(&FOUR_ROOMS).expect("built-in layout is valid");
        spec.goal_reward = 1.0;
        spec.max_episode_steps = 300;
        spec
    }

    /// Parses an ASCII layout: `#` wall, `S` start, `G` goal, anything
    /// else floor.
    pub fn from_layout<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().chars().count()).unwrap_or(0);
        let mut walls = BTreeSet::new();
        let (mut start, mut goal) = (None, None);
        for (r, line) in rows.iter().enumerate() {
            let line = line.as_ref();
            if line.chars().count() != width {
                return Err(Error::Config(format!("layout row {r} has a different width")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => {
                        walls.insert(Cell::new(r, c));
                    }
                    'S' => start = Some(Cell::new(r, c)),
                    'G' => goal = Some(Cell::new(r, c)),
                    _ => {}
                }
            }
        }
        let start = start.ok_or_else(|| Error::Config("layout has no start cell 'S'".into()))?;
        let spec = GridSpec {
            height,
            width,
            walls,
            start,
            goal,
            goal_reward: if goal.is_some() { 1.0 } else { 0.0 },
            max_episode_steps: 300,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: GridSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("grid must have positive height and width".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be positive".into()));
        }
        if !(self.goal_reward.is_finite() && self.goal_reward >= 0.0) {
            return Err(Error::Config("goal_reward must be finite and non-negative".into()));
        }
        let cells = self.walls.iter().chain(Some(&self.start)).chain(self.goal.as_ref());
        for cell in cells {
            if !self.in_bounds(*cell) {
                return Err(Error::OutOfBounds {
                    row: cell.row,
                    col: cell.col,
                    height: self.height,
                    width: self.width,
                });
            }
        }
        if self.walls.contains(&self.start) {
            return Err(Error::Config("start cell is a wall".into()));
        }
        if self.goal.is_some_and(|g| self.walls.contains(&g)) {
            return Err(Error::Config("goal cell is a wall".into()));
        }
        Ok(())
    }

    /// The observation with the agent at `agent`.
    pub fn render(&self, agent: Cell) -> Result<Observation> {
        if !self.in_bounds(agent) {
            return Err(Error::invalid(format!("cell ({}, {}) is outside the grid", agent.row, agent.col)));
        }
        let (h, w) = (self.height, self.width);
        let mut px = vec![LEVEL_EMPTY; h * w];
        for c in &self.walls {
            px[c.row * w + c.col] = LEVEL_WALL;
        }
        if let Some(g) = self.goal {
            px[g.row * w + g.col] = LEVEL_GOAL;
        }
        px[agent.row * w + agent.col] = LEVEL_AGENT;
        Ok(Observation(Tensor::new(vec![1, h, w], px)?))
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.row < self.height && cell.col < self.width
    }

    pub fn is_open(&self, cell: Cell) -> bool {
        self.in_bounds(cell) && !self.walls.contains(&cell)
    }

    pub fn open_cells(&self) -> usize {
        self.height * self.width - self.walls.len()
    }

    /// Cell reached by `action` from `from`; stays put when blocked.
    pub fn transition(&self, from: Cell, action: Action) -> Cell {
        let to = match action {
            Action::Up => from.row.checked_sub(1).map(|r| Cell::new(r, from.col)),
            Action::Down => Some(Cell::new(from.row + 1, from.col)),
            Action::Left => from.col.checked_sub(1).map(|c| Cell::new(from.row, c)),
            Action::Right => Some(Cell::new(from.row, from.col + 1)),
        };
        to.filter(|c| self.is_open(*c)).unwrap_or(from)
    }

    /// Breadth-first shortest path length in moves, if reachable.
    pub fn shortest_path_len(&self, from: Cell, to: Cell) -> Option<usize> {
        if !self.is_open(from) || !self.is_open(to) {
            return None;
        }
        let mut dist = vec![usize::MAX; self.height * self.width];
        let idx = |c: Cell| c.row * self.width + c.col;
        dist[idx(from)] = 0;
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                return Some(dist[idx(cur)]);
            }
            for a in Action::ALL {
                let next = self.transition(cur, a);
                if dist[idx(next)] == usize::MAX {
                    dist[idx(next)] = dist[idx(cur)] + 1;
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

/// Rendered state image, `[1, H, W]` channel-first, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(Tensor);

impl Observation {
    /// Wraps a `[C, H, W]` tensor whose values lie in `[0, 1]`.
    pub fn new(pixels: Tensor) -> Result<Self> {
        if pixels.shape().len() != 3 {
            return Err(Error::ShapeMismatch {
                context: "observation must be [C, H, W]",
                expected: vec![1, 0, 0],
                got: pixels.shape().to_vec(),
            });
        }
        if !pixels.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::invalid("observation values must lie in [0, 1]"));
        }
        Ok(Observation(pixels))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn shape(&self) -> &[usize] {
        self.0.shape()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub r_ext: f64,
    pub done: bool,
    /// True only when the episode ended by entering the goal.
    pub reached_goal: bool,
    pub cell: Cell,
}

/// A running episode on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct GridWorld {
    spec: GridSpec,
    pos: Cell,
    steps: u32,
    done: bool,
    seed: u64,
}

impl GridWorld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let pos = spec.start;
        Ok(GridWorld {
            spec,
            pos,
            steps: 0,
            done: false,
            seed: 0,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn position(&self) -> Cell {
        self.pos
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn observation_shape(&self) -> [usize; 3] {
        [1, self.spec.height, self.spec.width]
    }

    /// Starts a new episode. Dynamics are deterministic, so the seed is
    /// kept for the record but does not influence transitions.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.seed = seed;
        self.pos = self.spec.start;
        self.steps = 0;
        self.done = false;
        self.render_observation()
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        self.pos = self.spec.transition(self.pos, action);
        self.steps += 1;
        let reached_goal = self.spec.goal == Some(self.pos);
        let r_ext = if reached_goal { self.spec.goal_reward } else { 0.0 };
        self.done = reached_goal || self.steps >= self.spec.max_episode_steps;
        Ok(StepResult {
            obs: self.render_observation(),
            r_ext,
            done: self.done,
            reached_goal,
            cell: self.pos,
        })
    }

    pub fn render_observation(&self) -> Observation {
        self.spec.render(self.pos).expect("agent stays in bounds")
    }
}

/// Per-cell visit counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitDensity {
    height: usize,
    width: usize,
    counts: Vec<u64>,
    total_steps: u64,
}

impl VisitDensity {
    pub fn new(height: usize, width: usize) -> Self {
        VisitDensity {
            height,
            width,
            counts: vec![0; height * width],
            total_steps: 0,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    pub fn count(&self, cell: Cell) -> u64 {
        self.counts[cell.row * self.width + cell.col]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn accumulate(&mut self, cell: Cell) -> Result<()> {
        if cell.row >= self.height || cell.col >= self.width {
            return Err(Error::OutOfBounds {
                row: cell.row,
                col: cell.col,
                height: self.height,
                width: self.width,
            });
        }
        self.counts[cell.row * self.width + cell.col] += 1;
        self.total_steps += 1;
        Ok(())
    }

    /// Number of distinct cells visited at least once.
    pub fn coverage(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// One CSV line per grid row, one count per column, no header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        for row in self.counts.chunks(self.width) {
            w.write_record(row.iter().map(u64::to_string))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path.as_ref())?;
        let mut counts = Vec::new();
        let mut width = None;
        let mut height = 0;
        for record in r.records() {
            let record = record?;
            if *width.get_or_insert(record.len()) != record.len() {
                return Err(Error::invalid("ragged density CSV"));
            }
            for field in record.iter() {
                counts.push(
                    field
                        .trim()
                        .parse::<u64>()
                        .map_err(|e| Error::invalid(format!("bad count {field:?}: {e}")))?,
                );
            }
            height += 1;
        }
        let width = width.unwrap_or(0);
        let total_steps = counts.iter().sum();
        Ok(VisitDensity {
            height,
            width,
            counts,
            total_steps,
        })
    }

    /// Grayscale heatmap, one pixel per cell, brightness proportional to
    /// `ln(1 + count)` and scaled so the busiest cell is white.
    pub fn heatmap(&self) -> Result<GrayImage> {
        let max = self.counts.iter().copied().max().unwrap_or(0);
        if self.height == 0 || self.width == 0 || max == 0 {
            return Err(Error::invalid("density map is empty"));
        }
        let denom = (1.0 + max as f64).ln();
        let mut img = GrayImage::new(self.width as u32, self.height as u32);
        for (i, &c) in self.counts.iter().enumerate() {
            let level = (1.0 + c as f64).ln() / denom;
            let (r, col) = (i / self.width, i % self.width);
            img.put_pixel(col as u32, r as u32, Luma([(level * 255.0).round() as u8]));
        }
        Ok(img)
    }

    pub fn write_heatmap(&self, path: impl AsRef<Path>) -> Result<()> {
        self.heatmap()?.save(path.as_ref())?;
        Ok(())
    }
}

/// Writes a grayscale rendering of `spec` with `path` cells highlighted.
pub fn write_path_overlay(spec: &GridSpec, path_cells: &[Cell], out: impl AsRef<Path>) -> Result<()> {
    let mut img = GrayImage::new(spec.width as u32, spec.height as u32);
    for c in &spec.walls {
        img.put_pixel(c.col as u32, c.row as u32, Luma([84]));
    }
    for c in path_cells {
        img.put_pixel(c.col as u32, c.row as u32, Luma([255]));
    }
    if let Some(g) = spec.goal {
        img.put_pixel(g.col as u32, g.row as u32, Luma([168]));
    }
    img.save(out.as_ref())?;
    Ok(())
}

/// Plain-text rendering for terminals and logs.
pub fn ascii_path(spec: &GridSpec, path_cells: &[Cell]) -> String {
    let on_path: BTreeSet<Cell> = path_cells.iter().copied().collect();
    let mut out = Vec::new();
    for r in 0..spec.height {
        for c in 0..spec.width {
            let cell = Cell::new(r, c);
            let ch = if spec.walls.contains(&cell) {
                '#'
            } else if cell == spec.start {
                'S'
            } else if Some(cell) == spec.goal {
                'G'
            } else if on_path.contains(&cell) {
                '*'
            } else {
                '.'
            };
            let _ = write!(out, "{ch}");
        }
        out.push(b'\n');
    }
    String::from_utf8(out).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dark_chamber_starts_bottom_left() {
        let mut env = GridWorld::new(GridSpec::dark_chamber()).unwrap();
        env.reset(7);
        assert_eq!(env.position(), Cell::new(49, 0));
        let obs = env.render_observation();
        assert_eq!(obs.shape(), &[1, 50, 50]);
    }

    #[test]
    fn four_rooms_layout() {
        let spec = GridSpec::four_rooms();
        assert_eq!((spec.height, spec.width), (13, 13));
        assert_eq!(spec.start, Cell::new(1, 11));
        assert_eq!(spec.goal, Some(Cell::new(11, 1)));
        assert_eq!(spec.goal_reward, 1.0);
        assert_eq!(spec.max_episode_steps, 300);
        // Border plus the two dividing walls minus four doorways.
        assert_eq!(spec.open_cells(), 104);
        assert_eq!(spec.shortest_path_len(spec.start, spec.goal.unwrap()), Some(20));
        let mut env = GridWorld::new(spec).unwrap();
        env.reset(0);
        assert_eq!(env.position(), Cell::new(1, 11));
    }

    #[test]
    fn reset_is_deterministic() {
        let mut env = GridWorld::new(GridSpec::four_rooms()).unwrap();
        let a = env.reset(3);
        env.step(Action::Left).unwrap();
        let b = env.reset(3);
        assert_eq!(a, b);
    }

    #[test]
    fn dark_chamber_never_rewards() {
        let mut env = GridWorld::new(GridSpec::dark_chamber()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        env.reset(1);
        let mut total = 0.0;
        while !env.is_done() {
            let r = env.step(Action::ALL[rng.gen_range(0..4)]).unwrap();
            total += r.r_ext;
        }
        assert_eq!(total, 0.0);
        assert_eq!(env.steps(), 500);
        assert!(matches!(env.step(Action::Up), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn walls_block_movement() {
        let mut env = GridWorld::new(GridSpec::four_rooms()).unwrap();
        env.reset(0);
        // (1, 11) has the outer wall directly above and to the right.
        let r = env.step(Action::Up).unwrap();
        assert_eq!(r.cell, Cell::new(1, 11));
        assert_eq!(r.r_ext, 0.0);
        let r = env.step(Action::Right).unwrap();
        assert_eq!(r.cell, Cell::new(1, 11));
    }

    #[test]
    fn entering_goal_pays_and_ends() {
        let mut spec = GridSpec::four_rooms();
        spec.start = Cell::new(10, 1);
        let mut env = GridWorld::new(spec).unwrap();
        env.reset(0);
        let r = env.step(Action::Down).unwrap();
        assert_eq!(r.r_ext, 1.0);
        assert!(r.done && r.reached_goal);
    }

    #[test]
    fn render_levels() {
        let spec = GridSpec::open_room(2, 2);
        let mut spec = spec;
        spec.start = Cell::new(0, 0);
        let env = GridWorld::new(spec).unwrap();
        let obs = env.render_observation();
        let agent = obs.tensor().data().iter().filter(|&&v| v == LEVEL_AGENT).count();
        assert_eq!(agent, 1);
        assert_eq!(obs.tensor().data()[0], LEVEL_AGENT);
        assert_eq!(obs, env.render_observation());

        let fr = GridWorld::new(GridSpec::four_rooms()).unwrap().render_observation();
        let d = fr.tensor().data();
        assert_eq!(d[0], LEVEL_WALL);
        assert_eq!(d[11 * 13 + 1], LEVEL_GOAL);
        assert_eq!(d[13 + 11], LEVEL_AGENT);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = GridSpec::four_rooms();
        spec.start = Cell::new(0, 0);
        assert!(spec.validate().is_err());
        let mut spec = GridSpec::four_rooms();
        spec.goal = Some(Cell::new(6, 6));
        assert!(spec.validate().is_err());
        assert!(GridSpec::open_room(0, 4).validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let spec = GridSpec::four_rooms();
        let text = spec.to_toml_string().unwrap();
        assert_eq!(GridSpec::from_toml_str(&text).unwrap(), spec);
        assert!(GridSpec::from_toml_str("height = 2\nwidth = 2\nstart = { row = 0, col = 0 }\nmax_episode_steps = 5\nbogus = 1").is_err());
    }

    #[test]
    fn density_counts() {
        let mut d = VisitDensity::new(3, 3);
        d.accumulate(Cell::new(0, 0)).unwrap();
        assert_eq!((d.count(Cell::new(0, 0)), d.total_steps()), (1, 1));
        for _ in 0..9 {
            d.accumulate(Cell::new(2, 1)).unwrap();
        }
        assert_eq!(d.count(Cell::new(2, 1)), 9);
        assert!(d.accumulate(Cell::new(3, 0)).is_err());
        assert_eq!(d.coverage(), 2);
    }

    #[test]
    fn random_walk_density_matches_log() {
        let mut env = GridWorld::new(GridSpec::dark_chamber()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut density = VisitDensity::new(50, 50);
        let mut log = Vec::new();
        env.reset(9);
        let mut seen = 0;
        for _ in 0..1000 {
            if env.is_done() {
                env.reset(9);
            }
            let r = env.step(Action::ALL[rng.gen_range(0..4)]).unwrap();
            density.accumulate(r.cell).unwrap();
            log.push(r.cell);
            // Coverage never shrinks.
            assert!(density.coverage() >= seen);
            seen = density.coverage();
        }
        assert_eq!(density.counts().iter().sum::<u64>(), 1000);
        for cell in &log {
            let n = log.iter().filter(|c| *c == cell).count() as u64;
            assert_eq!(density.count(*cell), n);
        }
    }

    #[test]
    fn heatmap_pixels() {
        let mut d = VisitDensity::new(4, 4);
        assert!(d.heatmap().is_err());
        d.accumulate(Cell::new(1, 2)).unwrap();
        let img = d.heatmap().unwrap();
        assert_eq!(img.pixels().filter(|p| p.0[0] > 0).count(), 1);
        assert_eq!(img.get_pixel(2, 1).0[0], 255);

        let mut u = VisitDensity::new(3, 5);
        for r in 0..3 {
            for c in 0..5 {
                u.accumulate(Cell::new(r, c)).unwrap();
            }
        }
        let img = u.heatmap().unwrap();
        assert!(img.pixels().all(|p| p.0[0] == 255));
    }

    #[test]
    fn density_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = VisitDensity::new(3, 4);
        d.accumulate(Cell::new(2, 3)).unwrap();
        d.accumulate(Cell::new(2, 3)).unwrap();
        d.accumulate(Cell::new(0, 1)).unwrap();
        let path = dir.path().join("density.csv");
        d.write_csv(&path).unwrap();
        assert_eq!(VisitDensity::read_csv(&path).unwrap(), d);
    }
}
