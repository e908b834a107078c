use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::*;
use crate::dt_agent::{classify_activity, current_phase, Landmarks};
use crate::protocol::{ActionRequest, ChestDirection, Craftable};

/// An action the world refused during a tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub agent: AgentId,
    pub action: ActionRequest,
    pub error: ActionError,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepReport {
    pub rejections: Vec<Rejection>,
}

/// Ticks of sustained mining left before a unit drops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MiningProgress {
    pub ticks_required: u64,
}

impl WorldState {
    pub fn init(config: MissionConfig) -> Result<Self, WorldError> {
        config.validate()?;
        let mut blocks = vec![Block::Ground; (config.width * config.height) as usize];
        let index = |c: Cell| (c.y * config.width + c.x) as usize;
        for (cell, material, _) in config.plan.cells() {
            blocks[index(cell)] = Block::Marker(material);
        }
        for tower in &config.towers {
            blocks[index(tower.cell)] = Block::Tower {
                material: tower.material,
                remaining: tower.stock,
            };
        }
        blocks[index(config.crafting_table)] = Block::CraftingTable;
        blocks[index(config.chest)] = Block::Chest;
        Ok(Self {
            config,
            tick: 0,
            blocks,
            chest: BTreeMap::new(),
            agents: BTreeMap::new(),
        })
    }

    pub fn clock(&self) -> f64 {
        self.tick as f64 / self.config.tick_rate_hz as f64
    }

    fn index(&self, cell: Cell) -> Option<usize> {
        self.config
            .in_bounds(cell)
            .then(|| (cell.y * self.config.width + cell.x) as usize)
    }

    /// Position of `cell` in [`WorldState::blocks`].
    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        self.index(cell)
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        let w = self.config.width as usize;
        Cell::new((index % w) as i32, (index / w) as i32)
    }

    pub fn block(&self, cell: Cell) -> Option<&Block> {
        self.index(cell).map(|i| &self.blocks[i])
    }

    fn set_block(&mut self, cell: Cell, block: Block) {
        let i = self.index(cell).expect("cell in bounds");
        self.blocks[i] = block;
    }

    pub fn is_walkable(&self, cell: Cell) -> bool {
        self.block(cell).is_some_and(|b| !b.is_solid())
    }

    pub fn agent(&self, id: &AgentId) -> Result<&AgentState, WorldError> {
        self.agents
            .get(id)
            .ok_or_else(|| WorldError::UnknownAgent(id.clone()))
    }

    fn agent_mut(&mut self, id: &AgentId) -> Result<&mut AgentState, WorldError> {
        self.agents
            .get_mut(id)
            .ok_or_else(|| WorldError::UnknownAgent(id.clone()))
    }

    /// Candidate spawn cells in seed order.
    pub fn spawn_cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .config
            .spawn_area
            .cells()
            .filter(|&c| {
                matches!(self.block(c), Some(Block::Ground | Block::Air))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        cells.shuffle(&mut rng);
        cells
    }

    /// Adds an agent at the next seeded spawn cell. Humans may place blocks
    /// unless told otherwise; AI agents may not.
    pub fn join(
        &mut self,
        id: AgentId,
        kind: AgentKind,
        can_place: Option<bool>,
    ) -> Result<&AgentState, WorldError> {
        if self.agents.contains_key(&id) {
            return Err(WorldError::DuplicateAgent(id));
        }
        let spawns = self.spawn_cells();
        let spawn = spawns[self.agents.len() % spawns.len()];
        self.insert_agent(id, kind, can_place.unwrap_or(kind == AgentKind::Human), spawn.center())
    }

    pub(crate) fn insert_agent(
        &mut self,
        id: AgentId,
        kind: AgentKind,
        can_place: bool,
        position: Position,
    ) -> Result<&AgentState, WorldError> {
        if self.agents.contains_key(&id) {
            return Err(WorldError::DuplicateAgent(id));
        }
        let landmarks = Landmarks::from_config(&self.config);
        let mut agent = AgentState {
            id: id.clone(),
            kind,
            can_place,
            position,
            heading: Heading::default(),
            inventory: Inventory::default(),
            held_item: HeldItem::None,
            looking_at: None,
            behavior_state: ActivityLabel::Idle,
            doing: Doing::Idle,
            task: None,
        };
        agent.behavior_state = classify_activity(&agent, &landmarks);
        Ok(self.agents.entry(id).or_insert(agent))
    }

    pub fn has_started(&self) -> bool {
        crate::protocol::mission_start_gate(self.agents.values().map(|a| a.kind))
    }

    /// Advances the world by one tick. Requests are applied in agent-id
    /// order; a refused request leaves the agent's current task in place.
    pub fn step(
        &mut self,
        actions: &BTreeMap<AgentId, ActionRequest>,
        dt: f64,
    ) -> Result<StepReport, WorldError> {
        let expected = self.config.tick_seconds();
        if (dt - expected).abs() > 1e-9 {
            return Err(WorldError::InvalidDt { got: dt, expected });
        }
        if let Some(unknown) = actions.keys().find(|id| !self.agents.contains_key(*id)) {
            return Err(WorldError::UnknownAgent(unknown.clone()));
        }

        let mut report = StepReport::default();
        let ids: Vec<AgentId> = self.agents.keys().cloned().collect();
        for id in &ids {
            self.agent_mut(id)?.doing = Doing::Idle;
            if let Some(action) = actions.get(id) {
                if let Err(error) = self.apply_request(id, action) {
                    report.rejections.push(Rejection {
                        agent: id.clone(),
                        action: *action,
                        error,
                    });
                }
            }
            self.advance_task(id, dt);
        }
        self.tick += 1;

        let landmarks = Landmarks::from_config(&self.config);
        for agent in self.agents.values_mut() {
            agent.behavior_state = classify_activity(agent, &landmarks);
        }
        Ok(report)
    }

    fn apply_request(&mut self, id: &AgentId, action: &ActionRequest) -> Result<(), ActionError> {
        match *action {
            ActionRequest::Idle => {
                let agent = self.agents.get_mut(id).expect("agent exists");
                agent.task = None;
                Ok(())
            }
            ActionRequest::MoveTo { target } => self.start_move(id, target),
            ActionRequest::Mine { target } => self.mine_block(id, target).map(|_| ()),
            ActionRequest::Craft { item } => match item {
                Craftable::Pickaxe => self.craft_pickaxe(id),
            },
            ActionRequest::Chest {
                direction,
                material,
                n,
            } => self.chest_transfer(id, direction, material, n),
            ActionRequest::Place { target, material } => self.place_block(id, target, material),
        }
    }

    fn start_move(&mut self, id: &AgentId, target: Cell) -> Result<(), ActionError> {
        if !self.config.in_bounds(target) {
            return Err(ActionError::OutOfBounds);
        }
        if !self.is_walkable(target) {
            return Err(ActionError::Blocked);
        }
        let agent = self.agents.get_mut(id).expect("agent exists");
        agent.task = Some(Task::MoveTo { target });
        agent.looking_at = Some(target);
        Ok(())
    }

    fn advance_task(&mut self, id: &AgentId, dt: f64) {
        let Some(task) = self.agents[id].task else {
            return;
        };
        match task {
            Task::MoveTo { target } => self.advance_move(id, target, dt),
            Task::Mine {
                target,
                started_tick,
                ticks_required,
            } => {
                self.agents.get_mut(id).expect("agent exists").doing = Doing::Mining;
                if self.tick + 1 - started_tick >= ticks_required {
                    self.finish_mining(id, target);
                }
            }
        }
    }

    fn advance_move(&mut self, id: &AgentId, target: Cell, dt: f64) {
        let step = self.config.move_speed * dt;
        let agent = &self.agents[id];
        let goal = target.center();
        let (dx, dy) = (goal.x - agent.position.x, goal.y - agent.position.y);
        let distance = dx.hypot(dy);
        let (next, arrived) = if distance <= step + 1e-12 {
            (goal, true)
        } else {
            let f = step / distance;
            (
                Position::new(agent.position.x + dx * f, agent.position.y + dy * f),
                false,
            )
        };
        let blocked = !self.is_walkable(next.cell());
        let agent = self.agents.get_mut(id).expect("agent exists");
        if blocked {
            agent.task = None;
            return;
        }
        if let Some(h) = Heading::from_delta(dx, dy) {
            agent.heading = h;
        }
        agent.position = next;
        agent.doing = Doing::Moving;
        if arrived {
            agent.task = None;
        }
    }

    /// Starts sustained mining of a tower block. The unit drops after the
    /// returned number of ticks unless another request interrupts.
    pub fn mine_block(&mut self, id: &AgentId, target: Cell) -> Result<MiningProgress, ActionError> {
        if !self.agents.contains_key(id) {
            return Err(ActionError::UnknownAgent);
        }
        let material = match self.block(target) {
            Some(Block::Tower {
                material,
                remaining,
            }) if *remaining > 0 => *material,
            Some(_) => return Err(ActionError::NotMineable),
            None => return Err(ActionError::OutOfBounds),
        };
        let reach = self.config.reach;
        let capacity = self.config.inventory_capacity;
        let agent = self.agents.get(id).ok_or(ActionError::UnknownAgent)?;
        if agent.position.distance_to_cell(target) > reach + 1e-9 {
            return Err(ActionError::OutOfReach);
        }
        if agent.inventory.total() >= capacity {
            return Err(ActionError::InventoryFull);
        }
        let has_pickaxe = agent.inventory.has_pickaxe();
        let ticks_required = self
            .config
            .ticks_for(self.config.mining.duration(material, has_pickaxe));
        let tick = self.tick;
        let agent = self.agents.get_mut(id).expect("agent exists");
        agent.task = Some(Task::Mine {
            target,
            started_tick: tick,
            ticks_required,
        });
        agent.looking_at = Some(target);
        agent.held_item = if has_pickaxe {
            HeldItem::Tool(Tool::Pickaxe)
        } else {
            HeldItem::None
        };
        Ok(MiningProgress { ticks_required })
    }

    fn finish_mining(&mut self, id: &AgentId, target: Cell) {
        let capacity = self.config.inventory_capacity;
        let full = self.agents[id].inventory.total() >= capacity;
        let mined = match self.block(target) {
            Some(Block::Tower {
                material,
                remaining,
            }) if *remaining > 0 && !full => Some((*material, *remaining - 1)),
            _ => None,
        };
        if let Some((material, remaining)) = mined {
            let block = if remaining == 0 {
                Block::Air
            } else {
                Block::Tower {
                    material,
                    remaining,
                }
            };
            self.set_block(target, block);
            self.agents
                .get_mut(id)
                .expect("agent exists")
                .inventory
                .add(material, 1);
        }
        self.agents.get_mut(id).expect("agent exists").task = None;
    }

    pub fn craft_pickaxe(&mut self, id: &AgentId) -> Result<(), ActionError> {
        let cost = self.config.pickaxe_wood_cost;
        let table = self.config.crafting_table;
        let reach = self.config.reach;
        let agent = self.agents.get_mut(id).ok_or(ActionError::UnknownAgent)?;
        if agent.inventory.has_pickaxe() {
            return Err(ActionError::AlreadyHasPickaxe);
        }
        if agent.position.distance_to_cell(table) > reach + 1e-9 {
            return Err(ActionError::NotAtTable);
        }
        if agent.inventory.count(Material::Wood) < cost {
            return Err(ActionError::InsufficientMaterials);
        }
        agent.inventory.remove(Material::Wood, cost);
        agent.inventory.tools.insert(Tool::Pickaxe);
        agent.held_item = HeldItem::Tool(Tool::Pickaxe);
        agent.looking_at = Some(table);
        agent.doing = Doing::Crafting;
        agent.task = None;
        Ok(())
    }

    pub fn chest_transfer(
        &mut self,
        id: &AgentId,
        direction: ChestDirection,
        material: Material,
        n: u32,
    ) -> Result<(), ActionError> {
        let chest = self.config.chest;
        let reach = self.config.reach;
        let inventory_capacity = self.config.inventory_capacity;
        let chest_total: u32 = self.chest.values().sum();
        let chest_capacity = self.config.chest_capacity;
        let in_chest = self.chest.get(&material).copied().unwrap_or(0);
        let agent = self.agents.get_mut(id).ok_or(ActionError::UnknownAgent)?;
        if agent.position.distance_to_cell(chest) > reach + 1e-9 {
            return Err(ActionError::OutOfReach);
        }
        if n == 0 {
            return Ok(());
        }
        match direction {
            ChestDirection::Deposit => {
                if agent.inventory.count(material) < n {
                    return Err(ActionError::InsufficientMaterials);
                }
                if chest_total + n > chest_capacity {
                    return Err(ActionError::ChestFull);
                }
                agent.inventory.remove(material, n);
                agent.held_item = HeldItem::None;
                *self.chest.entry(material).or_insert(0) += n;
            }
            ChestDirection::Withdraw => {
                if in_chest < n {
                    return Err(ActionError::InsufficientMaterials);
                }
                if agent.inventory.total() + n > inventory_capacity {
                    return Err(ActionError::InventoryFull);
                }
                agent.inventory.add(material, n);
                agent.held_item = HeldItem::Material(material);
                if in_chest == n {
                    self.chest.remove(&material);
                } else {
                    self.chest.insert(material, in_chest - n);
                }
            }
        }
        agent.looking_at = Some(chest);
        agent.doing = Doing::Chest;
        agent.task = None;
        Ok(())
    }

    pub fn place_block(
        &mut self,
        id: &AgentId,
        target: Cell,
        material: Material,
    ) -> Result<(), ActionError> {
        let agent = self.agents.get(id).ok_or(ActionError::UnknownAgent)?;
        if !agent.can_place {
            return Err(ActionError::CapabilityDenied);
        }
        let required = self
            .config
            .plan
            .required(target)
            .ok_or(ActionError::NotInPlan)?;
        if required != material {
            return Err(ActionError::WrongMaterial);
        }
        if matches!(self.block(target), Some(Block::Placed { .. })) {
            return Err(ActionError::Occupied);
        }
        if self.agents.values().any(|a| a.position.cell() == target) {
            return Err(ActionError::Occupied);
        }
        if agent.inventory.count(material) < 1 {
            return Err(ActionError::InsufficientMaterials);
        }
        if agent.position.distance_to_cell(target) > self.config.reach + 1e-9 {
            return Err(ActionError::OutOfReach);
        }
        self.set_block(
            target,
            Block::Placed {
                material,
                by: id.clone(),
            },
        );
        let agent = self.agents.get_mut(id).expect("agent exists");
        agent.inventory.remove(material, 1);
        agent.held_item = HeldItem::Material(material);
        agent.looking_at = Some(target);
        agent.doing = Doing::Placing;
        agent.task = None;
        Ok(())
    }

    /// Plan cells currently holding a placed block, sorted.
    pub fn placed_cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = self
            .config
            .plan
            .cells()
            .filter(|&(c, _, _)| matches!(self.block(c), Some(Block::Placed { .. })))
            .map(|(c, _, _)| c)
            .collect();
        cells.sort();
        cells
    }

    /// `(material, filled, total)` per plan layer.
    pub fn layer_progress(&self) -> Vec<(Material, u32, u32)> {
        self.config
            .plan
            .layers
            .iter()
            .map(|layer| {
                let filled = layer
                    .cells
                    .iter()
                    .filter(|&&c| {
                        matches!(self.block(c), Some(Block::Placed { material, .. }) if *material == layer.material)
                    })
                    .count() as u32;
                (layer.material, filled, layer.cells.len() as u32)
            })
            .collect()
    }

    pub fn completion_score(&self) -> f64 {
        let (filled, total) = self
            .layer_progress()
            .iter()
            .fold((0, 0), |(f, t), &(_, lf, lt)| (f + lf, t + lt));
        filled as f64 / total as f64
    }

    pub fn phase(&self) -> u8 {
        current_phase(self.completion_score(), &self.config.phase_thresholds)
    }

    pub fn check_termination(&self) -> MissionOutcome {
        let completion = self.completion_score();
        let ongoing = MissionOutcome {
            status: MissionStatus::Ongoing,
            ended_at: None,
            final_completion: completion,
        };
        if !self.has_started() {
            return ongoing;
        }
        let limit = self.config.time_limit_ticks();
        if completion >= 1.0 && self.tick <= limit {
            MissionOutcome {
                status: MissionStatus::Success,
                ended_at: Some(self.clock()),
                final_completion: completion,
            }
        } else if self.tick >= limit {
            MissionOutcome {
                status: MissionStatus::Failure,
                ended_at: Some(self.config.time_limit_s),
                final_completion: completion,
            }
        } else {
            ongoing
        }
    }

    /// Units of each material across towers, inventories, the chest and placed blocks.
    pub fn material_totals(&self) -> BTreeMap<Material, u64> {
        let mut totals: BTreeMap<Material, u64> = BTreeMap::new();
        for block in &self.blocks {
            match block {
                Block::Tower {
                    material,
                    remaining,
                } => *totals.entry(*material).or_insert(0) += *remaining as u64,
                Block::Placed { material, .. } => *totals.entry(*material).or_insert(0) += 1,
                _ => {}
            }
        }
        for agent in self.agents.values() {
            for (m, n) in &agent.inventory.counts {
                *totals.entry(*m).or_insert(0) += *n as u64;
            }
        }
        for (m, n) in &self.chest {
            *totals.entry(*m).or_insert(0) += *n as u64;
        }
        // pickaxes consume wood; count it back so crafting conserves
        for agent in self.agents.values() {
            if agent.inventory.has_pickaxe() {
                *totals.entry(Material::Wood).or_insert(0) += self.config.pickaxe_wood_cost as u64;
            }
        }
        totals
    }

    /// Agents that placed a block without holding the capability.
    pub fn capability_violations(&self) -> BTreeSet<AgentId> {
        self.blocks
            .iter()
            .filter_map(|b| match b {
                Block::Placed { by, .. } => Some(by),
                _ => None,
            })
            .filter(|by| self.agents.get(*by).is_some_and(|a| !a.can_place))
            .cloned()
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("world state serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    fn world_with_pair() -> WorldState {
        let mut world = WorldState::init(MissionConfig::default()).unwrap();
        world.join(id("human"), AgentKind::Human, None).unwrap();
        world.join(id("ai"), AgentKind::Ai, None).unwrap();
        world
    }

    fn teleport(world: &mut WorldState, who: &str, cell: Cell) {
        world.agents.get_mut(&id(who)).unwrap().position = cell.center();
    }

    fn run(world: &mut WorldState, actions: &[(&str, ActionRequest)], ticks: usize) {
        let dt = world.config.tick_seconds();
        let mut first: BTreeMap<AgentId, ActionRequest> =
            actions.iter().map(|(a, r)| (id(a), *r)).collect();
        for _ in 0..ticks {
            world.step(&first, dt).unwrap();
            first.clear();
        }
    }

    #[test]
    fn default_world_has_fixtures() {
        let world = WorldState::init(MissionConfig::default()).unwrap();
        for m in Material::ALL {
            assert!(world
                .blocks
                .iter()
                .any(|b| matches!(b, Block::Tower { material, .. } if *material == m)));
        }
        assert_eq!(world.blocks.iter().filter(|b| **b == Block::CraftingTable).count(), 1);
        assert_eq!(world.blocks.iter().filter(|b| **b == Block::Chest).count(), 1);
        assert_eq!(world.tick, 0);
        assert!(world.agents.is_empty());
        assert_eq!(world.completion_score(), 0.0);
    }

    #[test]
    fn init_is_deterministic() {
        let a = WorldState::init(MissionConfig::default().with_seed(3)).unwrap();
        let b = WorldState::init(MissionConfig::default().with_seed(3)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn empty_plan_is_invalid() {
        let mut config = MissionConfig::default();
        config.plan.layers.clear();
        assert!(matches!(
            WorldState::init(config),
            Err(WorldError::InvalidConfig(ConfigError::EmptyPlan))
        ));
    }

    #[test]
    fn idle_step_only_advances_clock() {
        let mut world = world_with_pair();
        let before = world.clone();
        run(&mut world, &[], 1);
        assert_eq!(world.tick, 1);
        let mut rewound = world.clone();
        rewound.tick = 0;
        assert_eq!(rewound, before);
    }

    #[test]
    fn twenty_ticks_is_one_second() {
        let mut world = world_with_pair();
        run(&mut world, &[], 20);
        assert_eq!(world.clock(), 1.0);
    }

    #[test]
    fn move_advances_by_speed_times_dt() {
        let mut world = world_with_pair();
        let start = Cell::new(5, 14);
        teleport(&mut world, "human", start);
        run(
            &mut world,
            &[("human", ActionRequest::MoveTo { target: start.offset(1, 0) })],
            1,
        );
        let pos = world.agents[&id("human")].position;
        let expected = start.center().x + world.config.move_speed * world.config.tick_seconds();
        assert!((pos.x - expected).abs() < 1e-12);
        assert_eq!(pos.y, start.center().y);
        assert_eq!(world.agents[&id("human")].heading, Heading::East);
    }

    #[test]
    fn step_rejects_unknown_agent() {
        let mut world = world_with_pair();
        let actions = BTreeMap::from([(id("ghost"), ActionRequest::Idle)]);
        assert!(matches!(
            world.step(&actions, world.config.tick_seconds()),
            Err(WorldError::UnknownAgent(_))
        ));
    }

    #[test]
    fn pickaxe_quarters_mining_time() {
        let world = world_with_pair();
        let mining = &world.config.mining;
        assert_eq!(mining.duration(Material::Wood, false), 2.0);
        assert_eq!(mining.duration(Material::Wood, true), 0.5);
    }

    #[test]
    fn mining_takes_duration_then_yields_one_unit() {
        let mut world = world_with_pair();
        let tower = world.config.towers[0].clone();
        teleport(&mut world, "ai", tower.cell.offset(0, -1));
        run(&mut world, &[("ai", ActionRequest::Mine { target: tower.cell })], 39);
        assert_eq!(world.agents[&id("ai")].inventory.count(tower.material), 0);
        run(&mut world, &[], 1);
        assert_eq!(world.agents[&id("ai")].inventory.count(tower.material), 1);
        assert_eq!(
            world.block(tower.cell),
            Some(&Block::Tower {
                material: tower.material,
                remaining: tower.stock - 1
            })
        );
    }

    #[test]
    fn mining_errors() {
        let mut world = world_with_pair();
        let ai = id("ai");
        teleport(&mut world, "ai", Cell::new(5, 14));
        assert_eq!(
            world.mine_block(&ai, Cell::new(5, 13)),
            Err(ActionError::NotMineable)
        );
        let tower = world.config.towers[0].cell;
        assert_eq!(world.mine_block(&ai, tower), Err(ActionError::OutOfReach));
        teleport(&mut world, "ai", tower.offset(0, 1));
        let capacity = world.config.inventory_capacity;
        world
            .agents
            .get_mut(&ai)
            .unwrap()
            .inventory
            .add(Material::Stone, capacity);
        let before = world.clone();
        assert_eq!(world.mine_block(&ai, tower), Err(ActionError::InventoryFull));
        assert_eq!(world, before);
    }

    #[test]
    fn crafting_consumes_recipe() {
        let mut world = world_with_pair();
        let human = id("human");
        let table = world.config.crafting_table;
        teleport(&mut world, "human", table.offset(1, 0));
        world.agents.get_mut(&human).unwrap().inventory.add(Material::Wood, 2);
        assert_eq!(
            world.craft_pickaxe(&human),
            Err(ActionError::InsufficientMaterials)
        );
        world.agents.get_mut(&human).unwrap().inventory.add(Material::Wood, 1);
        world.craft_pickaxe(&human).unwrap();
        let inv = &world.agents[&human].inventory;
        assert_eq!(inv.count(Material::Wood), 0);
        assert!(inv.has_pickaxe());
        assert_eq!(world.craft_pickaxe(&human), Err(ActionError::AlreadyHasPickaxe));
    }

    #[test]
    fn crafting_far_from_table_fails() {
        let mut world = world_with_pair();
        let human = id("human");
        let table = world.config.crafting_table;
        teleport(&mut world, "human", table.offset(5, 0));
        world.agents.get_mut(&human).unwrap().inventory.add(Material::Wood, 3);
        assert_eq!(world.craft_pickaxe(&human), Err(ActionError::NotAtTable));
    }

    #[test]
    fn chest_transfers_conserve_material() {
        let mut world = world_with_pair();
        let chest = world.config.chest;
        teleport(&mut world, "human", chest.offset(0, 1));
        teleport(&mut world, "ai", chest.offset(1, 0));
        let (human, ai) = (id("human"), id("ai"));
        world.agents.get_mut(&ai).unwrap().inventory.add(Material::Wood, 5);
        let totals = world.material_totals();
        world
            .chest_transfer(&ai, ChestDirection::Deposit, Material::Wood, 5)
            .unwrap();
        world
            .chest_transfer(&human, ChestDirection::Withdraw, Material::Wood, 5)
            .unwrap();
        assert_eq!(world.material_totals(), totals);
        assert_eq!(world.agents[&human].inventory.count(Material::Wood), 5);
        assert!(world.chest.is_empty());
        assert_eq!(
            world.chest_transfer(&human, ChestDirection::Withdraw, Material::Stone, 3),
            Err(ActionError::InsufficientMaterials)
        );
        let before = world.clone();
        world
            .chest_transfer(&human, ChestDirection::Deposit, Material::Wood, 0)
            .unwrap();
        assert_eq!(world, before);
    }

    #[test]
    fn placement_rules() {
        let mut world = world_with_pair();
        let (human, ai) = (id("human"), id("ai"));
        let target = world.config.plan.layers[0].cells[0];
        let stand = target.offset(0, -1);
        teleport(&mut world, "human", stand);
        teleport(&mut world, "ai", stand.offset(1, 0));
        for who in [&human, &ai] {
            let inv = &mut world.agents.get_mut(who).unwrap().inventory;
            inv.add(Material::Wood, 1);
            inv.add(Material::Brick, 1);
        }
        assert_eq!(
            world.place_block(&ai, target, Material::Wood),
            Err(ActionError::CapabilityDenied)
        );
        let before = world.clone();
        assert_eq!(
            world.place_block(&human, target, Material::Brick),
            Err(ActionError::WrongMaterial)
        );
        assert_eq!(world, before);
        assert_eq!(
            world.place_block(&human, Cell::new(0, 0), Material::Wood),
            Err(ActionError::NotInPlan)
        );
        world.place_block(&human, target, Material::Wood).unwrap();
        assert_eq!(
            world.place_block(&human, target, Material::Wood),
            Err(ActionError::Occupied)
        );
        assert!(world.capability_violations().is_empty());
    }

    #[test]
    fn completion_counts_filled_cells() {
        let mut world = world_with_pair();
        let cells: Vec<(Cell, Material)> =
            world.config.plan.cells().map(|(c, m, _)| (c, m)).collect();
        let by = id("human");
        for &(c, material) in &cells[..7] {
            world.set_block(c, Block::Placed { material, by: by.clone() });
        }
        let expected = 7.0 / cells.len() as f64;
        assert_eq!(world.completion_score(), expected);
        for &(c, material) in &cells {
            world.set_block(c, Block::Placed { material, by: by.clone() });
        }
        assert_eq!(world.completion_score(), 1.0);
    }

    #[test]
    fn final_block_completes_mission() {
        let mut world = world_with_pair();
        let human = id("human");
        let cells: Vec<(Cell, Material)> =
            world.config.plan.cells().map(|(c, m, _)| (c, m)).collect();
        let (last, material) = *cells.last().unwrap();
        for &(c, m) in &cells[..cells.len() - 1] {
            world.set_block(c, Block::Placed { material: m, by: human.clone() });
        }
        teleport(&mut world, "human", last.offset(0, 1));
        world.agents.get_mut(&human).unwrap().inventory.add(material, 1);
        assert_eq!(world.check_termination().status, MissionStatus::Ongoing);
        world.place_block(&human, last, material).unwrap();
        assert_eq!(world.completion_score(), 1.0);
        assert_eq!(world.check_termination().status, MissionStatus::Success);
    }

    #[test]
    fn termination_follows_time_limit() {
        let mut config = MissionConfig::default();
        config.time_limit_s = 900.0;
        config.collaboration.required = false;
        let mut world = WorldState::init(config).unwrap();
        world.join(id("human"), AgentKind::Human, None).unwrap();
        assert_eq!(world.check_termination().status, MissionStatus::Ongoing);
        world.join(id("ai"), AgentKind::Ai, None).unwrap();

        let cells: Vec<(Cell, Material)> =
            world.config.plan.cells().map(|(c, m, _)| (c, m)).collect();
        let fill = |world: &mut WorldState, n: usize| {
            for &(c, material) in &cells[..n] {
                world.set_block(c, Block::Placed { material, by: id("human") });
            }
        };

        world.tick = 100 * 20;
        fill(&mut world, cells.len() / 2);
        assert_eq!(world.check_termination().status, MissionStatus::Ongoing);

        world.tick = 900 * 20;
        let out = world.check_termination();
        assert_eq!(out.status, MissionStatus::Failure);
        assert_eq!(out.ended_at, Some(900.0));

        world.tick = 800 * 20;
        fill(&mut world, cells.len());
        let out = world.check_termination();
        assert_eq!(out.status, MissionStatus::Success);
        assert_eq!(out.ended_at, Some(800.0));
        assert_eq!(out.final_completion, 1.0);
    }
}
