//! Gridworlds and random MDPs.
//!
//! Grid text uses one character per cell: `.` free, `#` wall, `S` start,
//! `X` penalty cell that ends the episode, `D` diamond (rewarding, not
//! absorbing). Actions are up, down, left, right. With slip `p` the intended
//! move happens with probability `1 − p` and the remaining `p` is spread evenly
//! over all four directions. Bumping into a wall or the border keeps the agent
//! in place. The reward for `(s, a)` is the expected reward of the arrival
//! cell. Entering `X` pays the penalty and moves to an absorbing terminal sink.

use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{TabularMdp, Table};
use crate::transfer::{transform_reward, TransferFn};

/// Row and column offsets for up, down, left, right.
pub const MOVES: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

fn default_step() -> f64 {
    -1.0
}
fn default_diamond() -> f64 {
    -0.5
}
fn default_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    #[serde(default)]
    pub slip: f64,
    #[serde(default = "default_step")]
    pub step_reward: f64,
    #[serde(default = "default_diamond")]
    pub diamond_reward: f64,
    /// Reward for entering an `X` cell. Required whenever the layout has one.
    #[serde(default)]
    pub penalty_reward: Option<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            slip: 0.0,
            step_reward: default_step(),
            diamond_reward: default_diamond(),
            penalty_reward: None,
            gamma: default_gamma(),
        }
    }
}

/// Arrival reward for one cell, overriding the character-based default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardCell {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub layout: Vec<String>,
    pub params: GridParams,
    #[serde(default)]
    pub reward_cells: Vec<RewardCell>,
}

/// A built grid: the MDP plus the map between states and cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub mdp: TabularMdp,
    /// `cells[s]` is the `(row, col)` of state `s`; the sink has no cell.
    pub cells: Vec<(usize, usize)>,
    pub start: usize,
    pub sink: Option<usize>,
}

impl GridSpec {
    /// Parses layout text; a trailing newline is optional.
    pub fn from_text(text: &str, params: GridParams) -> Result<Self> {
        let mut layout: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        while layout.last().is_some_and(|l| l.is_empty()) {
            layout.pop();
        }
        let spec = Self {
            layout,
            params,
            reward_cells: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rows(&self) -> usize {
        self.layout.len()
    }

    pub fn cols(&self) -> usize {
        self.layout.first().map_or(0, |r| r.len())
    }

    fn cell(&self, r: usize, c: usize) -> u8 {
        self.layout[r].as_bytes()[c]
    }

    pub fn validate(&self) -> Result<()> {
        if self.layout.is_empty() || self.cols() == 0 {
            return Err(Error::Parse("grid is empty".into()));
        }
        let mut starts = 0;
        for (r, line) in self.layout.iter().enumerate() {
            if line.len() != self.cols() {
                return Err(Error::Parse(format!(
                    "grid is not rectangular: row {r} has {} cells, row 0 has {}",
                    line.len(),
                    self.cols()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '.' | '#' | 'X' | 'D' => {}
                    'S' => starts += 1,
                    other => return Err(Error::Parse(format!("unknown cell '{other}' at ({r}, {c})"))),
                }
            }
        }
        if starts != 1 {
            return Err(Error::Parse(format!("grid needs exactly one 'S', found {starts}")));
        }
        let p = &self.params;
        if !(0.0..=1.0).contains(&p.slip) {
            return Err(Error::Config(format!("slip {} outside [0, 1]", p.slip)));
        }
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            return Err(Error::Config(format!("discount {} outside (0, 1)", p.gamma)));
        }
        if ![p.step_reward, p.diamond_reward].iter().all(|x| x.is_finite())
            || p.penalty_reward.is_some_and(|x| !x.is_finite())
        {
            return Err(Error::Config("grid rewards must be finite".into()));
        }
        if self.layout.iter().any(|l| l.contains('X')) && p.penalty_reward.is_none() {
            return Err(Error::Config("layout has an 'X' cell but no penalty_reward is set".into()));
        }
        for rc in &self.reward_cells {
            if rc.row >= self.rows() || rc.col >= self.cols() || !rc.value.is_finite() {
                return Err(Error::Config(format!("reward cell {rc:?} is out of range")));
            }
            if matches!(self.cell(rc.row, rc.col), b'#' | b'X') {
                return Err(Error::Config(format!("reward cell {rc:?} sits on a wall or penalty cell")));
            }
        }
        Ok(())
    }

    fn arrival_reward(&self, r: usize, c: usize) -> f64 {
        if let Some(rc) = self.reward_cells.iter().rev().find(|rc| rc.row == r && rc.col == c) {
            return rc.value;
        }
        match self.cell(r, c) {
            b'D' => self.params.diamond_reward,
            _ => self.params.step_reward,
        }
    }

    /// The layout with diamonds erased: what must match across composed tasks.
    fn skeleton(&self) -> Vec<String> {
        self.layout.iter().map(|l| l.replace('D', ".")).collect()
    }

    pub fn build(&self) -> Result<GridWorld> {
        self.validate()?;
        let (rows, cols) = (self.rows(), self.cols());
        let mut index = vec![usize::MAX; rows * cols];
        let mut cells = Vec::new();
        let mut start = 0;
        for r in 0..rows {
            for c in 0..cols {
                match self.cell(r, c) {
                    b'#' | b'X' => {}
                    ch => {
                        if ch == b'S' {
                            start = cells.len();
                        }
                        index[r * cols + c] = cells.len();
                        cells.push((r, c));
                    }
                }
            }
        }
        let has_x = self.layout.iter().any(|l| l.contains('X'));
        let sink = has_x.then_some(cells.len());
        let n = cells.len() + usize::from(has_x);
        let n_a = MOVES.len();
        let slip = self.params.slip;

        let mut transition = vec![0.0; n * n_a * n];
        let mut reward = Table::zeros(n, n_a);
        for (s, &(r, c)) in cells.iter().enumerate() {
            for a in 0..n_a {
                let row = &mut transition[(s * n_a + a) * n..(s * n_a + a + 1) * n];
                let mut expected = 0.0;
                for (d, &(dr, dc)) in MOVES.iter().enumerate() {
                    let p = if d == a { 1.0 - slip } else { 0.0 } + slip / 4.0;
                    if p == 0.0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    let inside = nr >= 0 && nc >= 0 && (nr as usize) < rows && (nc as usize) < cols;
                    let (tr, tc) = if inside && self.cell(nr as usize, nc as usize) != b'#' {
                        (nr as usize, nc as usize)
                    } else {
                        (r, c)
                    };
                    if self.cell(tr, tc) == b'X' {
                        row[sink.expect("sink exists when X does")] += p;
                        expected += p * self.params.penalty_reward.expect("validated");
                    } else {
                        row[index[tr * cols + tc]] += p;
                        expected += p * self.arrival_reward(tr, tc);
                    }
                }
                reward.set(s, a, expected);
            }
        }
        let mut terminal = vec![false; n];
        if let Some(k) = sink {
            terminal[k] = true;
            for a in 0..n_a {
                transition[(k * n_a + a) * n + k] = 1.0;
            }
        }
        let mut initial = vec![0.0; n];
        initial[start] = 1.0;
        let mdp = TabularMdp::new(n, n_a, transition, reward, self.params.gamma, terminal, initial)?;
        Ok(GridWorld {
            mdp,
            cells,
            start,
            sink,
        })
    }
}

/// Builds the MDP for layout `text` under `params`.
pub fn parse_grid(text: &str, params: GridParams) -> Result<TabularMdp> {
    Ok(GridSpec::from_text(text, params)?.build()?.mdp)
}

/// Builds every primitive, checking they share states, dynamics and discount.
pub fn build_primitives(specs: &[GridSpec]) -> Result<Vec<GridWorld>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::Structural("need at least one primitive grid".into()))?;
    for (k, spec) in specs.iter().enumerate().skip(1) {
        if spec.skeleton() != first.skeleton() {
            return Err(Error::Structural(format!("grid {k} has a different layout from grid 0")));
        }
        if spec.params.slip != first.params.slip || spec.params.gamma != first.params.gamma {
            return Err(Error::Structural(format!("grid {k} has different slip or discount from grid 0")));
        }
    }
    specs.iter().map(GridSpec::build).collect()
}

/// The composite task: shared dynamics, reward `f(r₁, …, r_M)`.
pub fn compose_grids(f: &TransferFn, specs: &[GridSpec]) -> Result<TabularMdp> {
    let worlds = build_primitives(specs)?;
    let rewards: Vec<&Table> = worlds.iter().map(|w| w.mdp.reward()).collect();
    worlds[0].mdp.with_reward(transform_reward(f, &rewards)?)
}

/// An open `size × size` grid with deterministic moves, zero step reward, and
/// `n_rewards` distinct cells paying a reward drawn from `reward_range`.
pub fn random_sparse_grid(size: usize, n_rewards: usize, reward_range: (f64, f64), seed: u64) -> Result<GridSpec> {
    if size == 0 || n_rewards == 0 || n_rewards >= size * size {
        return Err(Error::Config(format!(
            "need 0 < n_rewards < {} for a {size}x{size} grid, got {n_rewards}",
            size * size
        )));
    }
    let (lo, hi) = reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::Config(format!("invalid reward range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = index::sample(&mut rng, size * size, n_rewards).into_vec();
    chosen.sort_unstable();
    let reward_cells = chosen
        .into_iter()
        .map(|i| RewardCell {
            row: i / size,
            col: i % size,
            value: rng.gen_range(lo..hi),
        })
        .collect();
    let mut layout = vec![".".repeat(size); size];
    layout[0].replace_range(0..1, "S");
    Ok(GridSpec {
        layout,
        params: GridParams {
            slip: 0.0,
            step_reward: 0.0,
            ..GridParams::default()
        },
        reward_cells,
    })
}

/// Dense random MDP without terminals: rows are normalized positive uniforms,
/// rewards uniform in `reward_range`, uniform initial distribution.
pub fn random_mdp(
    n_states: usize,
    n_actions: usize,
    reward_range: (f64, f64),
    gamma: f64,
    seed: u64,
) -> Result<TabularMdp> {
    let (lo, hi) = reward_range;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::Config(format!("invalid reward range ({lo}, {hi})")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        // 1 - U[0,1) keeps every entry strictly positive
        let row: Vec<f64> = (0..n_states).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let z: f64 = row.iter().sum();
        transition.extend(row.iter().map(|x| x / z));
    }
    let reward = Table::from_fn(n_states, n_actions, |_, _| if lo == hi { lo } else { rng.gen_range(lo..=hi) });
    TabularMdp::without_terminals(transition, reward, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(slip: f64) -> GridParams {
        GridParams {
            slip,
            ..GridParams::default()
        }
    }

    #[test]
    fn diamond_on_arrival() {
        let m = parse_grid("SD\n", params(0.0)).unwrap();
        assert_eq!(m.n_states(), 2);
        // right from S lands on D
        assert_eq!(m.transition_row(0, 3), &[0.0, 1.0]);
        assert_eq!(m.reward().get(0, 3), -0.5);
        // left from S bumps the border
        assert_eq!(m.transition_row(0, 2), &[1.0, 0.0]);
        assert_eq!(m.reward().get(0, 2), -1.0);
        assert!(m.is_deterministic());
    }

    #[test]
    fn full_slip_is_uniform_over_directions() {
        let m = parse_grid("...\n.S.\n...", params(1.0)).unwrap();
        let centre = 4;
        for a in 0..4 {
            let row = m.transition_row(centre, a);
            for t in [1, 3, 5, 7] {
                assert!((row[t] - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn slip_kernel_matches_enumeration() {
        // 3x3 open grid, corner state 0 = (0,0), action right
        let m = parse_grid("S..\n...\n...", params(0.2)).unwrap();
        let row = m.transition_row(0, 3);
        // up and left bump: stay with 0.05 + 0.05; down 0.05 to (1,0); right 0.8 + 0.05 to (0,1)
        assert!((row[0] - 0.1).abs() < 1e-12);
        assert!((row[1] - 0.85).abs() < 1e-12);
        assert!((row[3] - 0.05).abs() < 1e-12);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_cell_routes_to_sink() {
        let mut p = params(0.0);
        p.penalty_reward = Some(-10.0);
        let w = GridSpec::from_text("SX.", p).unwrap().build().unwrap();
        let sink = w.sink.unwrap();
        assert_eq!(w.mdp.n_states(), 3);
        assert!(w.mdp.is_terminal(sink));
        assert_eq!(w.mdp.transition_row(0, 3)[sink], 1.0);
        assert_eq!(w.mdp.reward().get(0, 3), -10.0);
        assert_eq!(w.mdp.reward().get(sink, 0), 0.0);
    }

    #[test]
    fn walls_block() {
        let m = parse_grid("S#.", params(0.0)).unwrap();
        assert_eq!(m.n_states(), 2);
        assert_eq!(m.transition_row(0, 3), &[1.0, 0.0]);
    }

    #[test]
    fn malformed_grids() {
        assert!(matches!(parse_grid("S.\n...", params(0.0)), Err(Error::Parse(_))));
        assert!(matches!(parse_grid("..\n..", params(0.0)), Err(Error::Parse(_))));
        assert!(matches!(parse_grid("SS", params(0.0)), Err(Error::Parse(_))));
        assert!(matches!(parse_grid("S?", params(0.0)), Err(Error::Parse(_))));
        assert!(matches!(parse_grid("SX", params(0.0)), Err(Error::Config(_))));
        assert!(matches!(parse_grid("S.", params(1.5)), Err(Error::Config(_))));
    }

    #[test]
    fn compose_checks_layout() {
        let a = GridSpec::from_text("SD.", params(0.0)).unwrap();
        let b = GridSpec::from_text("S.D", params(0.0)).unwrap();
        let or = TransferFn::or_max(2).unwrap();
        let m = compose_grids(&or, &[a.clone(), b]).unwrap();
        assert_eq!(m.reward().get(1, 3), -0.5);
        assert_eq!(m.reward().get(0, 3), -0.5);
        let same = compose_grids(&or, &[a.clone(), a.clone()]).unwrap();
        assert_eq!(same.reward(), a.build().unwrap().mdp.reward());
        let c = GridSpec::from_text("S#D", params(0.0)).unwrap();
        assert!(matches!(compose_grids(&or, &[a.clone(), c]), Err(Error::Structural(_))));
        let d = GridSpec::from_text("SD.", params(0.1)).unwrap();
        assert!(matches!(compose_grids(&or, &[a, d]), Err(Error::Structural(_))));
    }

    #[test]
    fn sparse_grid_rules() {
        assert!(random_sparse_grid(6, 0, (0.0, 1.0), 0).is_err());
        assert!(random_sparse_grid(6, 36, (0.0, 1.0), 0).is_err());
        let a = random_sparse_grid(6, 5, (0.0, 1.0), 9).unwrap();
        assert_eq!(a, random_sparse_grid(6, 5, (0.0, 1.0), 9).unwrap());
        assert_eq!(a.reward_cells.len(), 5);
        let w = a.build().unwrap();
        assert!(w.mdp.is_deterministic());
        let nonzero = w.mdp.reward().values().iter().filter(|r| **r != 0.0).count();
        assert!(nonzero > 0);
        assert!(w.mdp.reward().values().iter().all(|r| (0.0..1.0).contains(r)));
    }

    #[test]
    fn random_mdp_rows_and_seeds() {
        let m = random_mdp(6, 3, (-1.0, 0.0), 0.9, 5).unwrap();
        for s in 0..6 {
            for a in 0..3 {
                let row = m.transition_row(s, a);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|p| *p > 0.0));
            }
        }
        assert_eq!(m, random_mdp(6, 3, (-1.0, 0.0), 0.9, 5).unwrap());
        assert_ne!(m, random_mdp(6, 3, (-1.0, 0.0), 0.9, 6).unwrap());
    }
}
