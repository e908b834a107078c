use std::cmp::Reverse;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pathfinding::DistanceField;
use crate::protocol::ActionRequest;
use crate::skills::{Controller, ControllerOutput, Executor, Observation, Step};
use crate::world::{AgentId, AgentKind, Cell, Material, Position};

/// Stand-in for a human builder.
///
/// Fetches the current layer's material (from the chest when it has any,
/// otherwise from a tower), crafts one pickaxe, and fills the plan layer by
/// layer, placing any in-reach cell of the layer first.
#[derive(Debug)]
pub struct ScriptedHuman {
    id: AgentId,
    batch: u32,
    executor: Executor,
    chat: Vec<(f64, String)>,
}

impl ScriptedHuman {
    pub const MIN_BATCH: u32 = 16;
    pub const MAX_BATCH: u32 = 24;

    pub fn new(id: AgentId, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f4_u64);
        Self {
            id,
            batch: rng.random_range(Self::MIN_BATCH..=Self::MAX_BATCH),
            executor: Executor::new(false),
            chat: Vec::new(),
        }
    }

    /// Lines to say at the given sim times, in order.
    pub fn with_chat(mut self, mut lines: Vec<(f64, String)>) -> Self {
        lines.sort_by(|a, b| a.0.total_cmp(&b.0));
        lines.reverse();
        self.chat = lines;
        self
    }

    pub fn batch(&self) -> u32 {
        self.batch
    }

    fn plan(&self, obs: &Observation<'_>) -> Vec<Step> {
        let Some(me) = obs.me() else {
            return Vec::new();
        };
        let Some(layer) = obs.current_layer() else {
            return vec![Step::Wait { seconds: 1.0 }];
        };
        let material = obs.mission.plan.layers[layer].material;
        let wood = Material::Wood;
        let cost = obs.mission.pickaxe_wood_cost;
        if !me.inventory.has_pickaxe() {
            if me.inventory.count(wood) < cost {
                let chest_wood = obs.update.chest_count(wood);
                if chest_wood > 0 {
                    let n = (cost - me.inventory.count(wood)).min(chest_wood);
                    return vec![Step::Withdraw { material: wood, n }];
                }
                return vec![Step::Mine {
                    material: wood,
                    until: cost,
                }];
            }
            return vec![Step::CraftPickaxe];
        }
        if me.inventory.count(material) > 0 {
            let target = next_target(obs, layer, me.position);
            return target
                .map(|cell| vec![Step::Place { cell, material }])
                .unwrap_or_default();
        }
        // Take what the chest has, then top up at a tower so every trip to
        // the house carries at least a full batch.
        let need = obs.cells_remaining(material);
        let in_chest = obs.update.chest_count(material);
        let mut steps = Vec::new();
        if in_chest > 0 {
            steps.push(Step::Withdraw {
                material,
                n: in_chest.min(need),
            });
        }
        steps.push(Step::Mine {
            material,
            until: self.batch.min(need),
        });
        steps
    }
}

/// Unplaced cell of the layer to place next: any within reach, else the
/// one the fewest steps away, ties going to row-major order with rows counted
/// from the south edge, where the towers and chest are.
fn next_target(obs: &Observation<'_>, layer: usize, at: Position) -> Option<Cell> {
    let here = at.cell();
    let steps = DistanceField::from(&obs.nav_grid(false), here);
    let open = obs.mission.plan.layers[layer]
        .cells
        .iter()
        .copied()
        .filter(|&c| !obs.is_placed(c));
    open.min_by_key(|&c| {
        let reachable = c != here && obs.within_reach(at, c);
        (!reachable, steps.get(c).unwrap_or(u32::MAX), Reverse(c.y), c.x)
    })
}

impl Controller for ScriptedHuman {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Human
    }

    fn on_update(&mut self, obs: &Observation<'_>) -> ControllerOutput {
        let mut out = ControllerOutput::default();
        while self.chat.last().is_some_and(|(t, _)| *t <= obs.sim_time()) {
            out.chat.push(self.chat.pop().expect("checked").1);
        }
        if obs.me().is_none() {
            return out;
        }
        for _ in 0..2 {
            if self.executor.is_idle() {
                self.executor = Executor::with_steps(false, self.plan(obs));
            }
            match self.executor.next_action(obs) {
                Some(action) => {
                    out.action = Some(action);
                    return out;
                }
                None if !self.executor.is_idle() => return out,
                None => {}
            }
        }
        out.action = Some(ActionRequest::Idle);
        out
    }
}

/// An AI teammate that joins and does nothing.
#[derive(Debug)]
pub struct IdleAgent {
    id: AgentId,
}

impl IdleAgent {
    pub fn new(id: AgentId) -> Self {
        Self { id }
    }
}

impl Controller for IdleAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Ai
    }

    fn on_update(&mut self, _obs: &Observation<'_>) -> ControllerOutput {
        ControllerOutput::default()
    }
}
