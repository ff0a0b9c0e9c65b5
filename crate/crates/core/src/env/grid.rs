//! Icy GridWorld: cardinal moves on an integer grid where left/right moves
//! onto ice slip backwards. The dynamics model ignores ice.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Environment, PlanningProblem, Problem};
use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    /// Fixed tie-breaking order used by the planner's greedy extension.
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Move::Up => (0, 1),
            Move::Down => (0, -1),
            Move::Left => (-1, 0),
            Move::Right => (1, 0),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Move::Up => 0,
            Move::Down => 1,
            Move::Left => 2,
            Move::Right => 3,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Move::Left | Move::Right)
    }
}

/// ASCII map, top row first: `.` free, `I` ice, `#` obstacle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridWorldConfig {
    pub map: Vec<String>,
    pub slip_magnitude: u32,
    /// When false the model walks through obstacles; the planner still
    /// rejects predicted states inside them.
    pub model_knows_obstacles: bool,
}

impl Default for GridWorldConfig {
    fn default() -> Self {
        let map = [
            "..........",
            "..........",
            "...#......",
            "...#.II...",
            "...#.II...",
            "...#.II...",
            "...#.II...",
            "...#......",
            "..........",
            "..........",
        ];
        Self {
            map: map.iter().map(|r| r.to_string()).collect(),
            slip_magnitude: 2,
            model_knows_obstacles: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GridWorld {
    width: i32,
    height: i32,
    ice: BTreeSet<Cell>,
    obstacles: BTreeSet<Cell>,
    slip_magnitude: u32,
    model_knows_obstacles: bool,
    free: Vec<Cell>,
}

impl GridWorld {
    pub fn from_config(cfg: &GridWorldConfig) -> Result<Self> {
        let height = cfg.map.len();
        if height == 0 {
            return Err(Error::invalid("grid map has no rows"));
        }
        let width = cfg.map[0].chars().count();
        if width == 0 {
            return Err(Error::invalid("grid map has empty rows"));
        }
        let mut ice = BTreeSet::new();
        let mut obstacles = BTreeSet::new();
        for (row, line) in cfg.map.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::invalid(format!("grid map row {row} has a different width")));
            }
            let y = (height - 1 - row) as i32;
            for (x, ch) in line.chars().enumerate() {
                let c = Cell::new(x as i32, y);
                match ch {
                    '.' => {}
                    'I' => {
                        ice.insert(c);
                    }
                    '#' => {
                        obstacles.insert(c);
                    }
                    other => return Err(Error::invalid(format!("unknown grid map symbol {other:?}"))),
                }
            }
        }
        Self::new(
            width as i32,
            height as i32,
            ice,
            obstacles,
            cfg.slip_magnitude,
            cfg.model_knows_obstacles,
        )
    }

    pub fn new(
        width: i32,
        height: i32,
        ice: BTreeSet<Cell>,
        obstacles: BTreeSet<Cell>,
        slip_magnitude: u32,
        model_knows_obstacles: bool,
    ) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::invalid("grid dimensions must be positive"));
        }
        let inside = |c: &Cell| c.x >= 0 && c.y >= 0 && c.x < width && c.y < height;
        if !ice.iter().chain(&obstacles).all(inside) {
            return Err(Error::invalid("ice and obstacle cells must lie within the grid"));
        }
        if ice.intersection(&obstacles).next().is_some() {
            return Err(Error::invalid("a cell cannot be both ice and obstacle"));
        }
        let mut free = Vec::new();
        for x in 0..width {
            for y in 0..height {
                let c = Cell::new(x, y);
                if !obstacles.contains(&c) {
                    free.push(c);
                }
            }
        }
        if free.len() < 2 {
            return Err(Error::invalid("grid needs at least two free cells"));
        }
        Ok(Self {
            width,
            height,
            ice,
            obstacles,
            slip_magnitude,
            model_knows_obstacles,
            free,
        })
    }

    pub fn to_config(&self) -> GridWorldConfig {
        let map = (0..self.height)
            .rev()
            .map(|y| {
                (0..self.width)
                    .map(|x| {
                        let c = Cell::new(x, y);
                        if self.obstacles.contains(&c) {
                            '#'
                        } else if self.ice.contains(&c) {
                            'I'
                        } else {
                            '.'
                        }
                    })
                    .collect()
            })
            .collect();
        GridWorldConfig {
            map,
            slip_magnitude: self.slip_magnitude,
            model_knows_obstacles: self.model_knows_obstacles,
        }
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn ice(&self) -> &BTreeSet<Cell> {
        &self.ice
    }

    pub fn obstacles(&self) -> &BTreeSet<Cell> {
        &self.obstacles
    }

    pub fn set_ice(&mut self, ice: BTreeSet<Cell>) -> Result<()> {
        *self = Self::new(
            self.width,
            self.height,
            ice,
            self.obstacles.clone(),
            self.slip_magnitude,
            self.model_knows_obstacles,
        )?;
        Ok(())
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.free
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && c.x < self.width && c.y < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && !self.obstacles.contains(&c)
    }

    fn shift(c: Cell, m: Move) -> Cell {
        let (dx, dy) = m.delta();
        Cell::new(c.x + dx, c.y + dy)
    }

    /// Whether a move from `s` triggers a slip: left/right onto an ice cell.
    pub fn slips(&self, s: Cell, a: Move) -> bool {
        let dest = Self::shift(s, a);
        a.is_horizontal() && self.is_free(dest) && self.ice.contains(&dest)
    }

    pub fn true_step(&self, s: Cell, a: Move) -> Cell {
        let dest = Self::shift(s, a);
        if !self.is_free(dest) {
            return s;
        }
        if !self.slips(s, a) {
            return dest;
        }
        let (dx, _) = a.delta();
        let mut cur = s;
        for _ in 0..self.slip_magnitude {
            let back = Cell::new(cur.x - dx, cur.y);
            if !self.is_free(back) {
                break;
            }
            cur = back;
        }
        cur
    }

    pub fn model_step(&self, s: Cell, a: Move) -> Cell {
        let dest = Self::shift(s, a);
        let blocked = if self.model_knows_obstacles {
            !self.is_free(dest)
        } else {
            !self.in_bounds(dest)
        };
        if blocked {
            s
        } else {
            dest
        }
    }

    /// Per-axis normalized Euclidean distance.
    pub fn cell_distance(&self, a: Cell, b: Cell) -> f64 {
        let dx = f64::from(a.x - b.x) / f64::from(self.width);
        let dy = f64::from(a.y - b.y) / f64::from(self.height);
        (dx * dx + dy * dy).sqrt()
    }

    fn random_free(&self, rng: &mut StreamRng) -> Cell {
        self.free[rng.random_range(0..self.free.len())]
    }
}

impl Environment for GridWorld {
    type State = Cell;
    type Action = Move;
    type Goal = Cell;

    fn id(&self) -> &'static str {
        "gridworld"
    }

    fn featurizer(&self) -> String {
        format!("gridworld-{}x{}", self.width, self.height)
    }

    fn feature_dim(&self) -> usize {
        6
    }

    fn features(&self, s: &Cell, a: &Move) -> Vec<f64> {
        let mut f = vec![
            f64::from(s.x) / f64::from(self.width),
            f64::from(s.y) / f64::from(self.height),
            0.0,
            0.0,
            0.0,
            0.0,
        ];
        f[2 + a.index()] = 1.0;
        f
    }

    fn true_step(&self, s: &Cell, a: &Move) -> Result<Cell> {
        Ok(GridWorld::true_step(self, *s, *a))
    }

    fn model_step(&self, s: &Cell, a: &Move) -> Result<Cell> {
        Ok(GridWorld::model_step(self, *s, *a))
    }

    fn distance(&self, a: &Cell, b: &Cell) -> f64 {
        self.cell_distance(*a, *b)
    }

    fn transition_allowed(&self, _s: &Cell, _a: &Move, next: &Cell) -> bool {
        self.is_free(*next)
    }

    fn action_valid(&self, _s: &Cell, _a: &Move) -> bool {
        true
    }

    fn sample_problem(&self, rng: &mut StreamRng) -> Problem<Self> {
        let start = self.random_free(rng);
        let goal = loop {
            let g = self.random_free(rng);
            if g != start {
                break g;
            }
        };
        PlanningProblem {
            env: self.id().to_string(),
            start,
            goal,
        }
    }

    fn goal_reached(&self, goal: &Cell, s: &Cell) -> bool {
        goal == s
    }

    fn state_valid(&self, s: &Cell) -> bool {
        self.is_free(*s)
    }

    fn sample_state(&self, rng: &mut StreamRng) -> Cell {
        self.random_free(rng)
    }

    fn sample_goal_state(&self, problem: &Problem<Self>, _rng: &mut StreamRng) -> Cell {
        problem.goal
    }

    fn planning_distance(&self, a: &Cell, b: &Cell) -> f64 {
        self.cell_distance(*a, *b)
    }

    /// Every move that reduces Manhattan distance to `toward`, in the fixed
    /// order up, down, left, right.
    fn steer(&self, from: &Cell, toward: &Cell, _goal_directed: bool, _rng: &mut StreamRng) -> Vec<Move> {
        let d0 = (from.x - toward.x).abs() + (from.y - toward.y).abs();
        Move::ALL
            .into_iter()
            .filter(|&m| {
                let c = Self::shift(*from, m);
                (c.x - toward.x).abs() + (c.y - toward.y).abs() < d0
            })
            .collect()
    }

    fn discrete_key(&self, s: &Cell) -> Option<u64> {
        Some((s.x as u64) * (self.height as u64) + s.y as u64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_with_ice(ice: &[(i32, i32)]) -> GridWorld {
        GridWorld::new(
            10,
            10,
            ice.iter().map(|&(x, y)| Cell::new(x, y)).collect(),
            BTreeSet::new(),
            2,
            true,
        )
        .unwrap()
    }

    #[test]
    fn plain_move_up() {
        let w = world_with_ice(&[]);
        assert_eq!(w.true_step(Cell::new(3, 3), Move::Up), Cell::new(3, 4));
    }

    #[test]
    fn slip_two_cells_back() {
        let w = world_with_ice(&[(4, 3)]);
        assert_eq!(w.true_step(Cell::new(3, 3), Move::Right), Cell::new(1, 3));
        assert_eq!(w.model_step(Cell::new(3, 3), Move::Right), Cell::new(4, 3));
        assert!((w.cell_distance(Cell::new(1, 3), Cell::new(4, 3)) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn slip_clipped_at_boundary() {
        let w = world_with_ice(&[(1, 5)]);
        assert_eq!(w.true_step(Cell::new(0, 5), Move::Right), Cell::new(0, 5));
        let w = world_with_ice(&[(2, 5)]);
        assert_eq!(w.true_step(Cell::new(1, 5), Move::Right), Cell::new(0, 5));
    }

    #[test]
    fn slip_stops_before_obstacle() {
        let w = GridWorld::new(10, 10, [Cell::new(5, 2)].into(), [Cell::new(2, 2)].into(), 2, true).unwrap();
        assert_eq!(w.true_step(Cell::new(4, 2), Move::Right), Cell::new(3, 2));
    }

    #[test]
    fn wall_and_bounds_keep_in_place() {
        let w = world_with_ice(&[]);
        assert_eq!(w.true_step(Cell::new(0, 3), Move::Left), Cell::new(0, 3));
        assert_eq!(w.model_step(Cell::new(0, 3), Move::Left), Cell::new(0, 3));
        assert_eq!(w.true_step(Cell::new(4, 9), Move::Up), Cell::new(4, 9));
    }

    #[test]
    fn vertical_moves_onto_ice_do_not_slip() {
        let w = world_with_ice(&[(3, 4)]);
        assert_eq!(w.true_step(Cell::new(3, 3), Move::Up), Cell::new(3, 4));
    }

    #[test]
    fn model_can_ignore_obstacles() {
        let cfg = GridWorldConfig {
            model_knows_obstacles: false,
            ..Default::default()
        };
        let w = GridWorld::from_config(&cfg).unwrap();
        assert_eq!(w.model_step(Cell::new(2, 4), Move::Right), Cell::new(3, 4));
        assert!(!w.transition_allowed(&Cell::new(2, 4), &Move::Right, &Cell::new(3, 4)));
        assert_eq!(w.true_step(Cell::new(2, 4), Move::Right), Cell::new(2, 4));
    }

    #[test]
    fn config_round_trip() {
        let cfg = GridWorldConfig::default();
        let w = GridWorld::from_config(&cfg).unwrap();
        assert_eq!(w.to_config(), cfg);
        assert_eq!(w.ice().len(), 8);
        assert_eq!(w.obstacles().len(), 6);
        assert!(w.ice().contains(&Cell::new(5, 3)));
        assert!(w.obstacles().contains(&Cell::new(3, 7)));
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<GridWorldConfig>(&json).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_maps() {
        let mut cfg = GridWorldConfig::default();
        cfg.map[2].push('.');
        assert!(GridWorld::from_config(&cfg).is_err());
        let mut cfg = GridWorldConfig::default();
        cfg.map[0] = "....x.....".into();
        assert!(GridWorld::from_config(&cfg).is_err());
    }

    #[test]
    fn steer_orders_moves() {
        let w = world_with_ice(&[]);
        let mut r = crate::rng::seeded(0);
        let moves = w.steer(&Cell::new(2, 2), &Cell::new(0, 5), false, &mut r);
        assert_eq!(moves, vec![Move::Up, Move::Left]);
        assert!(w.steer(&Cell::new(2, 2), &Cell::new(2, 2), false, &mut r).is_empty());
    }

    #[test]
    fn features_one_hot() {
        let w = world_with_ice(&[]);
        assert_eq!(
            w.features(&Cell::new(5, 2), &Move::Left),
            vec![0.5, 0.2, 0.0, 0.0, 1.0, 0.0]
        );
    }
}
