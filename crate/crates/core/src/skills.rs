//! Low-level skills shared by every in-world agent: walk somewhere, mine a
//! number of units, craft, use the chest, place a block. A skill turns the
//! latest observation into at most one [`ActionRequest`] per tick.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dt_agent::DecisionTrace;
use crate::pathfinding::{plan_path_any, NavGrid, NEIGHBORS};
use crate::protocol::{ActionRequest, AgentView, ChestDirection, Craftable, StateUpdate};
use crate::world::{AgentId, AgentKind, Cell, Material, MissionConfig, Position, Task};

/// What an agent sees on one broadcast.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub me: &'a AgentId,
    pub mission: &'a MissionConfig,
    pub update: &'a StateUpdate,
}

impl<'a> Observation<'a> {
    pub fn me(&self) -> Option<&'a AgentView> {
        self.update.agent(self.me)
    }

    pub fn human(&self) -> Option<&'a AgentView> {
        self.update.first_of_kind(AgentKind::Human)
    }

    pub fn sim_time(&self) -> f64 {
        self.update.world.clock
    }

    pub fn is_placed(&self, cell: Cell) -> bool {
        self.update.world.placed.binary_search(&cell).is_ok()
    }

    /// Index of the first layer with unplaced cells.
    pub fn current_layer(&self) -> Option<usize> {
        self.mission
            .plan
            .layers
            .iter()
            .position(|l| l.cells.iter().any(|&c| !self.is_placed(c)))
    }

    pub fn layer_material(&self, index: usize) -> Option<Material> {
        self.mission.plan.layers.get(index).map(|l| l.material)
    }

    /// Unplaced plan cells of `material`.
    pub fn cells_remaining(&self, material: Material) -> u32 {
        self.mission
            .plan
            .cells()
            .filter(|&(c, m, _)| m == material && !self.is_placed(c))
            .count() as u32
    }

    /// Units still to be mined: unplaced cells minus what the chest and all
    /// agents already hold.
    pub fn still_needed(&self, material: Material) -> u32 {
        let held: u32 = self
            .update
            .agents
            .iter()
            .map(|a| a.inventory.count(material))
            .sum::<u32>()
            + self.update.chest_count(material);
        self.cells_remaining(material).saturating_sub(held)
    }

    pub fn nav_grid(&self, avoid_plan: bool) -> NavGrid {
        let mut grid = NavGrid::from_observation(self.mission, self.update);
        if avoid_plan {
            for (cell, _, _) in self.mission.plan.cells() {
                grid.set_blocked(cell, true);
            }
        }
        if let Some(me) = self.me() {
            grid.set_blocked(me.position.cell(), false);
        }
        grid
    }

    pub fn within_reach(&self, from: Position, target: Cell) -> bool {
        from.distance_to_cell(target) <= self.mission.reach + 1e-9
    }
}

/// What a controller wants to do this tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ControllerOutput {
    pub action: Option<ActionRequest>,
    pub traces: Vec<DecisionTrace>,
    pub chat: Vec<String>,
}

/// An in-world agent driven by state updates.
pub trait Controller {
    fn id(&self) -> &AgentId;
    fn kind(&self) -> AgentKind;
    /// Placement capability requested on join; `None` takes the kind default.
    fn can_place(&self) -> Option<bool> {
        None
    }
    fn on_update(&mut self, obs: &Observation<'_>) -> ControllerOutput;
    fn on_chat(&mut self, _from: &AgentId, _text: &str, _sim_time: f64) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmark {
    Chest,
    CraftingTable,
    Tower(Material),
    Plan,
    Human,
}

/// A primitive skill step.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    GoTo(Landmark),
    GoToCell(Cell),
    /// Mine until carrying `until` units of the material.
    Mine { material: Material, until: u32 },
    CraftPickaxe,
    Deposit { material: Material, n: Option<u32> },
    DepositAll,
    Withdraw { material: Material, n: u32 },
    Place { cell: Cell, material: Material },
    /// Stand still for a while.
    Wait { seconds: f64 },
}

#[derive(Clone, Debug, PartialEq)]
enum Status {
    Done,
    Act(ActionRequest),
    Wait,
    Failed,
}

const STALL_LIMIT: u32 = 3;

/// Runs a queue of steps to completion.
#[derive(Clone, Debug, Default)]
pub struct Executor {
    steps: VecDeque<Step>,
    avoid_plan: bool,
    issued: bool,
    /// A chest transfer went out for the current step.
    transferred: bool,
    stalls: u32,
    last_seen: Option<(Position, u32, Option<Task>)>,
    wait_until: Option<f64>,
    failed: bool,
}

impl Executor {
    pub fn new(avoid_plan: bool) -> Self {
        Self {
            avoid_plan,
            ..Self::default()
        }
    }

    pub fn with_steps(avoid_plan: bool, steps: impl IntoIterator<Item = Step>) -> Self {
        let mut exec = Self::new(avoid_plan);
        exec.steps.extend(steps);
        exec
    }

    pub fn push(&mut self, step: Step) {
        self.steps.push_back(step);
    }

    pub fn clear(&mut self) {
        self.steps.clear();
        self.reset_step_state();
    }

    pub fn is_idle(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn failed(&self) -> bool {
        self.failed
    }

    pub fn current(&self) -> Option<&Step> {
        self.steps.front()
    }

    fn reset_step_state(&mut self) {
        self.issued = false;
        self.transferred = false;
        self.stalls = 0;
        self.last_seen = None;
        self.wait_until = None;
    }

    /// Next request for the world, or `None` to let the current task run.
    pub fn next_action(&mut self, obs: &Observation<'_>) -> Option<ActionRequest> {
        let me = obs.me()?;
        let seen = (me.position, me.inventory.total(), me.task);
        if self.issued && self.last_seen == Some(seen) && me.task.is_none() {
            self.stalls += 1;
        }
        self.last_seen = Some(seen);
        while let Some(step) = self.steps.front().cloned() {
            if self.stalls >= STALL_LIMIT {
                self.steps.pop_front();
                self.reset_step_state();
                self.failed = true;
                continue;
            }
            match self.evaluate(&step, me, obs) {
                Status::Done => {
                    self.steps.pop_front();
                    self.reset_step_state();
                }
                Status::Failed => {
                    self.steps.pop_front();
                    self.reset_step_state();
                    self.failed = true;
                }
                Status::Wait => return None,
                Status::Act(action) => {
                    self.issued = action != ActionRequest::Idle;
                    self.transferred |= matches!(action, ActionRequest::Chest { .. });
                    return Some(action);
                }
            }
        }
        None
    }

    fn evaluate(&mut self, step: &Step, me: &AgentView, obs: &Observation<'_>) -> Status {
        let grid = obs.nav_grid(self.avoid_plan);
        match *step {
            Step::GoTo(landmark) => match landmark_goals(landmark, obs, &grid) {
                Some(goals) => nav_status(navigate(me, &grid, &goals)),
                None => Status::Failed,
            },
            Step::GoToCell(cell) => nav_status(navigate(me, &grid, &[cell])),
            Step::Wait { seconds } => match self.wait_until {
                None => {
                    self.wait_until = Some(obs.sim_time() + seconds);
                    Status::Act(ActionRequest::Idle)
                }
                Some(until) if obs.sim_time() + 1e-9 >= until => Status::Done,
                Some(_) => Status::Wait,
            },
            Step::Mine { material, until } => {
                if me.inventory.count(material) >= until
                    || me.inventory.total() >= obs.mission.inventory_capacity
                {
                    return Status::Done;
                }
                if matches!(me.task, Some(Task::Mine { .. })) {
                    return Status::Wait;
                }
                let towers: Vec<Cell> = obs
                    .update
                    .world
                    .towers
                    .iter()
                    .filter(|t| t.material == material && t.remaining > 0)
                    .map(|t| t.cell)
                    .collect();
                if let Some(&target) = towers
                    .iter()
                    .find(|&&t| obs.within_reach(me.position, t) && me.task.is_none())
                {
                    return Status::Act(ActionRequest::Mine { target });
                }
                let goals = adjacent_goals(&towers, &grid);
                nav_status(navigate(me, &grid, &goals))
            }
            Step::CraftPickaxe => {
                if me.inventory.has_pickaxe() {
                    return Status::Done;
                }
                let table = obs.mission.crafting_table;
                if obs.within_reach(me.position, table) && me.task.is_none() {
                    return Status::Act(ActionRequest::Craft {
                        item: Craftable::Pickaxe,
                    });
                }
                nav_status(navigate(me, &grid, &adjacent_goals(&[table], &grid)))
            }
            Step::Deposit { material, n } => {
                let have = me.inventory.count(material);
                let n = n.map_or(have, |n| n.min(have));
                if self.transferred || n == 0 {
                    return Status::Done;
                }
                self.chest_interaction(me, obs, &grid, ChestDirection::Deposit, material, n)
            }
            Step::DepositAll => {
                let Some((&material, &n)) = me.inventory.counts.iter().next() else {
                    return Status::Done;
                };
                self.chest_interaction(me, obs, &grid, ChestDirection::Deposit, material, n)
            }
            Step::Withdraw { material, n } => {
                let room = obs.mission.inventory_capacity - me.inventory.total();
                let n = n.min(obs.update.chest_count(material)).min(room);
                if self.transferred || n == 0 {
                    return Status::Done;
                }
                self.chest_interaction(me, obs, &grid, ChestDirection::Withdraw, material, n)
            }
            Step::Place { cell, material } => {
                if obs.is_placed(cell) {
                    return Status::Done;
                }
                if me.inventory.count(material) == 0 {
                    return Status::Failed;
                }
                if obs.within_reach(me.position, cell)
                    && me.position.cell() != cell
                    && me.task.is_none()
                {
                    return Status::Act(ActionRequest::Place {
                        target: cell,
                        material,
                    });
                }
                let goals = stand_cells(cell, obs, &grid);
                nav_status(navigate(me, &grid, &goals))
            }
        }
    }

    fn chest_interaction(
        &mut self,
        me: &AgentView,
        obs: &Observation<'_>,
        grid: &NavGrid,
        direction: ChestDirection,
        material: Material,
        n: u32,
    ) -> Status {
        let chest = obs.mission.chest;
        if obs.within_reach(me.position, chest) && me.task.is_none() {
            return Status::Act(ActionRequest::Chest {
                direction,
                material,
                n,
            });
        }
        nav_status(navigate(me, grid, &adjacent_goals(&[chest], grid)))
    }
}

fn nav_status(nav: Nav) -> Status {
    match nav {
        Nav::Arrived => Status::Done,
        Nav::Move(cell) => Status::Act(ActionRequest::MoveTo { target: cell }),
        Nav::Wait => Status::Wait,
        Nav::Unreachable => Status::Failed,
    }
}

/// Outcome of one navigation decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nav {
    Arrived,
    Move(Cell),
    Wait,
    Unreachable,
}

/// Moves one cell at a time along a shortest path to the nearest goal,
/// re-planning at every cell so blocks placed meanwhile are avoided.
pub fn navigate(me: &AgentView, grid: &NavGrid, goals: &[Cell]) -> Nav {
    if matches!(me.task, Some(Task::MoveTo { .. })) {
        return Nav::Wait;
    }
    let here = me.position.cell();
    let centered = me.position == here.center();
    if !centered {
        return Nav::Move(here);
    }
    if goals.contains(&here) {
        return Nav::Arrived;
    }
    match plan_path_any(grid, here, goals) {
        Ok(path) => path.next_step().map_or(Nav::Arrived, Nav::Move),
        Err(_) => Nav::Unreachable,
    }
}

/// Walkable 4-neighbors of each target.
pub fn adjacent_goals(targets: &[Cell], grid: &NavGrid) -> Vec<Cell> {
    let mut goals: Vec<Cell> = targets
        .iter()
        .flat_map(|&t| grid.walkable_neighbors(t).collect::<Vec<_>>())
        .collect();
    goals.sort();
    goals.dedup();
    goals
}

/// Walkable cells other than `target` whose center is within reach of it.
pub fn stand_cells(target: Cell, obs: &Observation<'_>, grid: &NavGrid) -> Vec<Cell> {
    let mut cells = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            let c = target.offset(dx, dy);
            if c != target && !grid.is_blocked(c) && obs.within_reach(c.center(), target) {
                cells.push(c);
            }
        }
    }
    // Standing on an unfilled plan cell only gets in the way later.
    let off_plan: Vec<Cell> = cells
        .iter()
        .copied()
        .filter(|&c| obs.mission.plan.required(c).is_none())
        .collect();
    if off_plan.is_empty() { cells } else { off_plan }
}

fn landmark_goals(landmark: Landmark, obs: &Observation<'_>, grid: &NavGrid) -> Option<Vec<Cell>> {
    let goals = match landmark {
        Landmark::Chest => adjacent_goals(&[obs.mission.chest], grid),
        Landmark::CraftingTable => adjacent_goals(&[obs.mission.crafting_table], grid),
        Landmark::Tower(material) => {
            let towers: Vec<Cell> = obs
                .update
                .world
                .towers
                .iter()
                .filter(|t| t.material == material && t.remaining > 0)
                .map(|t| t.cell)
                .collect();
            adjacent_goals(&towers, grid)
        }
        Landmark::Plan => {
            let centroid = obs.mission.plan.centroid().cell();
            let mut best: Vec<Cell> = Vec::new();
            let mut best_d = u32::MAX;
            for y in 0..grid.height() {
                for x in 0..grid.width() {
                    let c = Cell::new(x, y);
                    if grid.is_blocked(c) {
                        continue;
                    }
                    let d = c.manhattan(centroid);
                    if d < best_d {
                        best_d = d;
                        best = vec![c];
                    }
                }
            }
            best
        }
        Landmark::Human => {
            let human = obs.human()?.position.cell();
            let mut goals: Vec<Cell> = NEIGHBORS
                .iter()
                .map(|&(dx, dy)| human.offset(dx, dy))
                .filter(|&c| !grid.is_blocked(c))
                .collect();
            if goals.is_empty() && !grid.is_blocked(human) {
                goals.push(human);
            }
            goals
        }
    };
    (!goals.is_empty()).then_some(goals)
}
