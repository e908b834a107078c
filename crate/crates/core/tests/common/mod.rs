//! Oracles and generators shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use hmt_core::aae::{MissionContextDoc, PromptBundle};
use hmt_core::dt_agent::{ActivityLabel, BranchStep, DecisionTrace};
use hmt_core::llm::{playhead_in, ChatMessage, Role};
use hmt_core::mission_log::MissionTimeline;
use hmt_core::pathfinding::{NavGrid, NEIGHBORS};
use hmt_core::protocol::{
    ActionRequest, ChestDirection, ClientMessage, Craftable, ErrorCode, ServerMessage, StateUpdate,
};
use hmt_core::world::{Doing, HeldItem, Task, Tool};
use hmt_core::{AgentId, AgentKind, Block, Cell, Material, MissionConfig, MissionStatus, Position, WorldState};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde_json::{json, Value};

/// Plain breadth-first shortest path length, in steps.
pub fn bfs_len(grid: &NavGrid, start: Cell, goal: Cell) -> Option<usize> {
    if grid.is_blocked(start) || grid.is_blocked(goal) {
        return None;
    }
    let mut dist = BTreeMap::from([(start, 0usize)]);
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if c == goal {
            return Some(dist[&c]);
        }
        for (dx, dy) in NEIGHBORS {
            let n = c.offset(dx, dy);
            if grid.in_bounds(n) && !grid.is_blocked(n) && !dist.contains_key(&n) {
                dist.insert(n, dist[&c] + 1);
                queue.push_back(n);
            }
        }
    }
    None
}

/// A square grid with each cell blocked with probability `density`, plus two
/// distinct free endpoints.
pub fn random_grid(rng: &mut impl Rng, side: i32, density: f64) -> (NavGrid, Cell, Cell) {
    loop {
        let mut grid = NavGrid::new(side, side);
        let mut free = Vec::new();
        for y in 0..side {
            for x in 0..side {
                let c = Cell::new(x, y);
                if rng.random_bool(density) {
                    grid.set_blocked(c, true);
                } else {
                    free.push(c);
                }
            }
        }
        if free.len() >= 2 {
            let pick: Vec<Cell> = free.choose_multiple(rng, 2).copied().collect();
            return (grid, pick[0], pick[1]);
        }
    }
}

pub fn id(s: &str) -> AgentId {
    AgentId::new(s).unwrap()
}

/// A world with a human and an AI joined, as episodes build it.
pub fn joined_world(config: MissionConfig) -> WorldState {
    let mut world = WorldState::init(config).unwrap();
    world.join(id("ai"), AgentKind::Ai, None).unwrap();
    world.join(id("human"), AgentKind::Human, None).unwrap();
    world
}

fn random_inventory(rng: &mut impl Rng, world: &WorldState) -> hmt_core::world::Inventory {
    let mut inv = hmt_core::world::Inventory::default();
    let mut room = world.config.inventory_capacity;
    for m in Material::ALL {
        if room == 0 {
            break;
        }
        let n = rng.random_range(0..=room.min(12));
        if n > 0 {
            inv.counts.insert(m, n);
            room -= n;
        }
    }
    if rng.random_bool(0.4) {
        inv.tools.insert(Tool::Pickaxe);
    }
    inv
}

/// An arbitrary but well-formed mid-mission state: agents anywhere walkable,
/// random inventories, chest, tower stock and a random share of the plan
/// built, so every phase shows up.
pub fn random_observation_world(rng: &mut impl Rng, config: &MissionConfig) -> WorldState {
    let mut world = joined_world(config.clone());
    world.tick = rng.random_range(0..world.config.time_limit_ticks());

    let mut plan: Vec<(Cell, Material)> = world.config.plan.cells().map(|(c, m, _)| (c, m)).collect();
    if rng.random_bool(0.5) {
        plan.shuffle(rng);
    }
    let built = rng.random_range(0..=plan.len());
    for &(cell, material) in &plan[..built] {
        let by = if rng.random_bool(0.8) { id("human") } else { id("ai") };
        let i = world.index_of(cell).unwrap();
        world.blocks[i] = Block::Placed { material, by };
    }
    for tower in world.config.towers.clone() {
        let i = world.index_of(tower.cell).unwrap();
        world.blocks[i] = Block::Tower {
            material: tower.material,
            remaining: rng.random_range(0..=tower.stock),
        };
    }
    world.chest.clear();
    for m in Material::ALL {
        let n = rng.random_range(0..=20);
        if n > 0 {
            world.chest.insert(m, n);
        }
    }

    let walkable: Vec<Cell> = (0..world.blocks.len())
        .map(|i| world.cell_at(i))
        .filter(|&c| world.is_walkable(c))
        .collect();
    let ids: Vec<AgentId> = world.agents.keys().cloned().collect();
    for agent_id in ids {
        let cell = *walkable.choose(rng).unwrap();
        let inventory = random_inventory(rng, &world);
        let target = *walkable.choose(rng).unwrap();
        let agent = world.agents.get_mut(&agent_id).unwrap();
        agent.position = Position::new(
            cell.x as f64 + rng.random_range(0.05..0.95),
            cell.y as f64 + rng.random_range(0.05..0.95),
        );
        agent.inventory = inventory;
        agent.held_item = match rng.random_range(0..3) {
            0 => HeldItem::None,
            1 => HeldItem::Material(*Material::ALL.choose(rng).unwrap()),
            _ => HeldItem::Tool(Tool::Pickaxe),
        };
        agent.doing = *[Doing::Idle, Doing::Moving, Doing::Mining, Doing::Crafting, Doing::Chest, Doing::Placing]
            .choose(rng)
            .unwrap();
        agent.behavior_state = *[
            ActivityLabel::Gathering(*Material::ALL.choose(rng).unwrap()),
            ActivityLabel::Crafting,
            ActivityLabel::Building,
            ActivityLabel::AtChest,
            ActivityLabel::Traveling,
            ActivityLabel::Idle,
        ]
        .choose(rng)
        .unwrap();
        agent.task = rng.random_bool(0.3).then_some(Task::MoveTo { target });
        if agent.kind == AgentKind::Ai && rng.random_bool(0.5) {
            // The policy must not place even when the world would allow it.
            agent.can_place = true;
        }
    }
    world
}

pub fn random_observation(rng: &mut impl Rng, config: &MissionConfig) -> StateUpdate {
    StateUpdate::from_world(&random_observation_world(rng, config))
}

// Timeline and prompt oracles.

/// Ways to break a valid timeline file.
pub fn corrupt(root: &mut Value, how: u8, at: usize) {
    let events = root["events"].as_array_mut().unwrap();
    let n = events.len();
    let i = at % n;
    match how {
        0 => events[i]["extra"] = json!(1),
        1 => {
            events[i].as_object_mut().unwrap().remove("action");
        }
        2 => {
            events[i].as_object_mut().unwrap().remove("timestamp");
        }
        3 => events[i]["timestamp"] = json!(-1.0),
        4 => events[i]["timestamp"] = json!("12.5"),
        5 => events[i]["timestamp"] = json!(1e9),
        6 => {
            // Out of order: strictly earlier than its predecessor.
            let j = i.max(1);
            let before = events[j - 1]["timestamp"].as_f64().unwrap();
            events[j]["timestamp"] = json!(before - 0.25);
        }
        7 => events[i] = json!([1, 2]),
        8 => events[i]["action"]["bogus"] = json!(true),
        9 => root["header"]["v"] = json!(99),
        10 => root["header"]["config_digest"] = json!("0000"),
        11 => root["events"] = json!({"not": "an array"}),
        _ => {
            root.as_object_mut().unwrap().remove("header");
        }
    }
}

/// Number of distinct ways [`corrupt`] can break a file.
pub const CORRUPTIONS: u8 = 13;

/// Latest trace phase at or before `t`; phase 1 before any trace.
pub fn phase_oracle(timeline: &MissionTimeline, t: f64) -> u8 {
    timeline.traces().filter(|(ts, _)| *ts <= t).last().map_or(1, |(_, tr)| tr.phase)
}

/// Checks one bundle against everything it was built from.
pub fn bundle_is_complete(
    bundle: &PromptBundle,
    context: &MissionContextDoc,
    timeline: &MissionTimeline,
    history: &[ChatMessage],
    playhead: f64,
    query: &str,
) -> Result<(), String> {
    let prompt = bundle.to_prompt();
    let m = &prompt.messages;
    if m.len() != history.len() + 3 {
        return Err(format!("{} messages for {} history entries", m.len(), history.len()));
    }
    if m[0].role != Role::System || !m[0].content.starts_with(context.text().trim_end()) {
        return Err("context document is not the verbatim start of the system message".into());
    }
    if m[1].role != Role::System {
        return Err("data is not a system message".into());
    }
    let body = m[1]
        .content
        .split_once("```json\n")
        .and_then(|(_, rest)| rest.rsplit_once("\n```"))
        .map(|(json, _)| json)
        .ok_or("data block has no json fence")?;
    let data: Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let full: Value = serde_json::from_slice(&timeline.to_json()).unwrap();
    if data["header"] != full["header"] || data["footer"] != full["footer"] {
        return Err("header or footer differs".into());
    }
    if !bundle.is_truncated() && data["events"] != full["events"] {
        return Err("untruncated data lost events".into());
    }
    if m[2..2 + history.len()] != *history {
        return Err("history reordered or altered".into());
    }
    let last = m.last().unwrap();
    if last.role != Role::User || !last.content.ends_with(query) {
        return Err("query is not the final user message".into());
    }
    match playhead_in(&prompt) {
        Some(t) if (t - playhead).abs() < 5e-4 => Ok(()),
        other => Err(format!("playhead line reads {other:?}, wanted {playhead}")),
    }
}

// Protocol strategies.

pub fn arb_id() -> impl Strategy<Value = AgentId> {
    "[a-z][a-z0-9_-]{0,11}".prop_map(|s| AgentId::new(s).unwrap())
}

pub fn arb_material() -> impl Strategy<Value = Material> {
    prop::sample::select(Material::ALL.to_vec())
}

pub fn arb_cell() -> impl Strategy<Value = Cell> {
    (-5i32..40, -5i32..40).prop_map(|(x, y)| Cell::new(x, y))
}

pub fn arb_action() -> impl Strategy<Value = ActionRequest> {
    prop_oneof![
        arb_cell().prop_map(|target| ActionRequest::MoveTo { target }),
        arb_cell().prop_map(|target| ActionRequest::Mine { target }),
        Just(ActionRequest::Craft { item: Craftable::Pickaxe }),
        (any::<bool>(), arb_material(), 0u32..100).prop_map(|(d, material, n)| ActionRequest::Chest {
            direction: if d { ChestDirection::Deposit } else { ChestDirection::Withdraw },
            material,
            n,
        }),
        (arb_cell(), arb_material()).prop_map(|(target, material)| ActionRequest::Place { target, material }),
        Just(ActionRequest::Idle),
    ]
}

pub fn arb_text() -> impl Strategy<Value = String> {
    prop_oneof![".{0,40}", "\\PC{0,40}", Just(String::new()), Just("\"quoted\"\n\ttab \\ slash".to_string())]
}

/// Finite floats, including awkward ones, so byte-exact round-trips are tested.
pub fn arb_time() -> impl Strategy<Value = f64> {
    prop_oneof![0.0f64..1e6, Just(0.1 + 0.2), Just(1e-300), Just(f64::MAX), Just(-0.0)]
}

pub fn arb_trace() -> impl Strategy<Value = DecisionTrace> {
    (
        arb_id(),
        arb_time(),
        1u8..=5,
        prop::collection::vec(("[a-z_]{1,12}", any::<bool>()), 0..5),
        "[a-z_]{1,12}",
        arb_action(),
    )
        .prop_map(|(agent, sim_time, phase, steps, selected_node, emitted_action)| DecisionTrace {
            agent,
            sim_time,
            phase,
            active_branch: steps.into_iter().map(|(node, result)| BranchStep { node, result }).collect(),
            selected_node,
            emitted_action,
        })
}

pub fn arb_client_message() -> impl Strategy<Value = ClientMessage> {
    prop_oneof![
        (arb_id(), any::<bool>(), prop::option::of(any::<bool>())).prop_map(|(name, human, can_place)| {
            ClientMessage::Join {
                name,
                kind: if human { AgentKind::Human } else { AgentKind::Ai },
                can_place,
            }
        }),
        arb_action().prop_map(|action| ClientMessage::Action { action }),
        arb_trace().prop_map(|trace| ClientMessage::Trace { trace }),
        arb_text().prop_map(|text| ClientMessage::Chat { text }),
        Just(ClientMessage::Disconnect),
    ]
}

fn arb_update() -> impl Strategy<Value = StateUpdate> {
    any::<u64>().prop_map(|seed| {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        random_observation(&mut rng, &MissionConfig::default())
    })
}

pub fn arb_error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::ProtocolViolation,
        ErrorCode::JoinRejected,
        ErrorCode::MalformedFrame,
        ErrorCode::UnknownVariant,
        ErrorCode::SchemaVersionMismatch,
        ErrorCode::ActionRejected,
        ErrorCode::AgentLeft,
    ])
}

pub fn arb_server_message() -> impl Strategy<Value = ServerMessage> {
    prop_oneof![
        (arb_id(), any::<bool>()).prop_map(|(agent_id, human)| ServerMessage::Joined {
            agent_id,
            kind: if human { AgentKind::Human } else { AgentKind::Ai },
            mission: Box::new(MissionConfig::default()),
        }),
        arb_update().prop_map(ServerMessage::StateUpdate),
        (arb_id(), arb_text()).prop_map(|(from, text)| ServerMessage::Chat { from, text }),
        (0usize..3, 0.0f64..1.0, prop::option::of(arb_time())).prop_map(|(s, final_completion, ended_at)| {
            ServerMessage::MissionEnd {
                outcome: hmt_core::MissionOutcome {
                    status: [MissionStatus::Ongoing, MissionStatus::Success, MissionStatus::Failure][s],
                    ended_at,
                    final_completion,
                },
            }
        }),
        (arb_error_code(), arb_text()).prop_map(|(code, detail)| ServerMessage::Error { code, detail }),
    ]
}
