//! A* planning on the 4-connected cell grid.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::protocol::StateUpdate;
use crate::world::{Cell, MissionConfig, WorldState};

/// Neighbor expansion order: north, east, south, west.
pub const NEIGHBORS: [(i32, i32); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NavGrid {
    width: i32,
    height: i32,
    blocked: Vec<bool>,
}

impl NavGrid {
    pub fn new(width: i32, height: i32) -> Self {
        Self {
            width,
            height,
            blocked: vec![false; (width.max(0) * height.max(0)) as usize],
        }
    }

    pub fn from_world(world: &WorldState) -> Self {
        let mut grid = Self::new(world.config.width, world.config.height);
        for (i, block) in world.blocks.iter().enumerate() {
            grid.blocked[i] = block.is_solid();
        }
        grid
    }

    /// Rebuilds the grid an agent sees from the mission layout plus a state
    /// update; agrees with [`NavGrid::from_world`] on the same tick.
    pub fn from_observation(config: &MissionConfig, update: &StateUpdate) -> Self {
        let mut grid = Self::new(config.width, config.height);
        grid.set_blocked(config.crafting_table, true);
        grid.set_blocked(config.chest, true);
        for tower in &update.world.towers {
            grid.set_blocked(tower.cell, tower.remaining > 0);
        }
        for &cell in &update.world.placed {
            grid.set_blocked(cell, true);
        }
        grid
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.x >= 0 && cell.y >= 0 && cell.x < self.width && cell.y < self.height
    }

    fn index(&self, cell: Cell) -> usize {
        (cell.y * self.width + cell.x) as usize
    }

    pub fn set_blocked(&mut self, cell: Cell, blocked: bool) {
        if self.in_bounds(cell) {
            let i = self.index(cell);
            self.blocked[i] = blocked;
        }
    }

    /// Out-of-bounds cells count as blocked.
    pub fn is_blocked(&self, cell: Cell) -> bool {
        !self.in_bounds(cell) || self.blocked[self.index(cell)]
    }

    pub fn walkable_neighbors(&self, cell: Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBORS
            .iter()
            .map(move |&(dx, dy)| cell.offset(dx, dy))
            .filter(|&c| !self.is_blocked(c))
    }
}

/// Cells from start to goal inclusive, each 4-adjacent to the next.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path(pub Vec<Cell>);

impl Path {
    /// Number of moves.
    pub fn len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    pub fn start(&self) -> Cell {
        self.0[0]
    }

    pub fn goal(&self) -> Cell {
        *self.0.last().expect("paths are never empty")
    }

    /// The cell after the start, if any move is needed.
    pub fn next_step(&self) -> Option<Cell> {
        self.0.get(1).copied()
    }

    pub fn is_valid_on(&self, grid: &NavGrid) -> bool {
        self.0.iter().all(|&c| !grid.is_blocked(c))
            && self.0.windows(2).all(|w| w[0].manhattan(w[1]) == 1)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum PathError {
    #[error("no path exists")]
    Unreachable,
    #[error("start or goal is blocked or out of bounds")]
    InvalidEndpoint,
}

/// Shortest path between two walkable cells.
pub fn plan_path(grid: &NavGrid, start: Cell, goal: Cell) -> Result<Path, PathError> {
    if grid.is_blocked(start) || grid.is_blocked(goal) {
        return Err(PathError::InvalidEndpoint);
    }
    search(grid, start, &[goal])
}

/// Shortest path to the nearest walkable 4-neighbor of `target`, which may
/// itself be solid (a tower, the chest, a plan cell to build on).
pub fn plan_path_adjacent(grid: &NavGrid, start: Cell, target: Cell) -> Result<Path, PathError> {
    if grid.is_blocked(start) || !grid.in_bounds(target) {
        return Err(PathError::InvalidEndpoint);
    }
    let goals: Vec<Cell> = grid.walkable_neighbors(target).collect();
    if goals.is_empty() {
        return Err(PathError::Unreachable);
    }
    search(grid, start, &goals)
}

/// Shortest path to whichever of `goals` is closest.
pub fn plan_path_any(grid: &NavGrid, start: Cell, goals: &[Cell]) -> Result<Path, PathError> {
    if grid.is_blocked(start) {
        return Err(PathError::InvalidEndpoint);
    }
    let goals: Vec<Cell> = goals.iter().copied().filter(|&g| !grid.is_blocked(g)).collect();
    if goals.is_empty() {
        return Err(PathError::Unreachable);
    }
    search(grid, start, &goals)
}

/// Step counts from one cell to every reachable walkable cell.
#[derive(Clone, Debug)]
pub struct DistanceField {
    width: i32,
    steps: Vec<Option<u32>>,
}

impl DistanceField {
    pub fn from(grid: &NavGrid, start: Cell) -> Self {
        let mut steps = vec![None; (grid.width * grid.height) as usize];
        if !grid.is_blocked(start) {
            steps[grid.index(start)] = Some(0);
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(cell) = queue.pop_front() {
                let d = steps[grid.index(cell)].expect("queued cells have a distance");
                for next in grid.walkable_neighbors(cell) {
                    let slot = &mut steps[grid.index(next)];
                    if slot.is_none() {
                        *slot = Some(d + 1);
                        queue.push_back(next);
                    }
                }
            }
        }
        Self {
            width: grid.width,
            steps,
        }
    }

    pub fn get(&self, cell: Cell) -> Option<u32> {
        if cell.x < 0 || cell.y < 0 || cell.x >= self.width {
            return None;
        }
        self.steps
            .get((cell.y * self.width + cell.x) as usize)
            .copied()
            .flatten()
    }
}

fn search(grid: &NavGrid, start: Cell, goals: &[Cell]) -> Result<Path, PathError> {
    let heuristic = |c: Cell| goals.iter().map(|&g| c.manhattan(g)).min().unwrap_or(0);
    let n = (grid.width * grid.height) as usize;
    let mut best = vec![u32::MAX; n];
    let mut parent: Vec<Option<Cell>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let mut pushed: u64 = 0;

    best[grid.index(start)] = 0;
    open.push(Reverse((heuristic(start), heuristic(start), pushed, start)));

    while let Some(Reverse((_, _, _, cell))) = open.pop() {
        let ci = grid.index(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if goals.contains(&cell) {
            let mut cells = vec![cell];
            let mut cur = cell;
            while let Some(p) = parent[grid.index(cur)] {
                cells.push(p);
                cur = p;
            }
            cells.reverse();
            return Ok(Path(cells));
        }
        let g = best[ci];
        for next in grid.walkable_neighbors(cell) {
            let ni = grid.index(next);
            if closed[ni] || g + 1 >= best[ni] {
                continue;
            }
            best[ni] = g + 1;
            parent[ni] = Some(cell);
            pushed += 1;
            let h = heuristic(next);
            open.push(Reverse((g + 1 + h, h, pushed, next)));
        }
    }
    Err(PathError::Unreachable)
}
