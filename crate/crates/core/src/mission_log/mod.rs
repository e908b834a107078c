//! Event-based mission timeline.
//!
//! A log opens once a human and an AI have joined and closes with the
//! mission outcome. Between the two it appends one [`TimelineEvent`] per
//! tick on which something worth recording happened: a tracked field
//! changed, an agent moved at least [`POSITION_GATE`] cells since its last
//! logged position, or a decision trace or chat line arrived.
//!
//! An event carries every field that differs from the last logged state,
//! so applying the events in order rebuilds the exact world at each event
//! timestamp.

mod schema;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{parse_bare_events, parse_timeline, TimelineError};

use crate::dt_agent::{ActivityLabel, DecisionTrace};
use crate::world::{
    AgentId, AgentKind, AgentState, Block, Cell, Doing, HeldItem, Heading, Inventory, Material,
    MissionConfig, MissionOutcome, MissionStatus, Position, Task, WorldState,
};

/// Minimum displacement, in cells, that triggers an event on its own.
pub const POSITION_GATE: f64 = 0.5;

pub const TIMELINE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub id: AgentId,
    pub kind: AgentKind,
    pub can_place: bool,
    pub spawn: Position,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineHeader {
    pub v: u32,
    pub mission_id: String,
    pub config_digest: String,
    pub seed: u64,
    /// Wall-clock start in RFC 3339, absent for headless runs so that
    /// timelines stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_time: Option<String>,
    pub config: MissionConfig,
    pub roster: Vec<RosterEntry>,
}

mod double_option {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, T: Serialize>(
        value: &Option<Option<T>>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        match value {
            Some(inner) => inner.serialize(serializer),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>, T: Deserialize<'de>>(
        deserializer: D,
    ) -> Result<Option<Option<T>>, D::Error> {
        Option::<T>::deserialize(deserializer).map(Some)
    }
}

/// Changed fields of one agent. Absent means unchanged.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDelta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joined: Option<RosterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Position>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<Heading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inventory: Option<Inventory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<ActivityLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub held_item: Option<HeldItem>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "double_option"
    )]
    pub looking_at: Option<Option<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doing: Option<Doing>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "double_option"
    )]
    pub task: Option<Option<Task>>,
}

impl AgentDelta {
    pub fn is_empty(&self) -> bool {
        *self == AgentDelta::default()
    }

    pub fn apply(&self, agent: &mut AgentState) {
        if let Some(p) = self.position {
            agent.position = p;
        }
        if let Some(h) = self.heading {
            agent.heading = h;
        }
        if let Some(inv) = &self.inventory {
            agent.inventory = inv.clone();
        }
        if let Some(a) = self.activity {
            agent.behavior_state = a;
        }
        if let Some(h) = self.held_item {
            agent.held_item = h;
        }
        if let Some(l) = self.looking_at {
            agent.looking_at = l;
        }
        if let Some(d) = self.doing {
            agent.doing = d;
        }
        if let Some(t) = self.task {
            agent.task = t;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockChange {
    pub cell: Cell,
    pub block: Block,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldDelta {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockChange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chest: Option<BTreeMap<Material, u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<u8>,
}

impl WorldDelta {
    pub fn is_empty(&self) -> bool {
        *self == WorldDelta::default()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatEntry {
    pub from: AgentId,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventAction {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub agents: BTreeMap<AgentId, AgentDelta>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decision_traces: Vec<DecisionTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chat: Vec<ChatEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub world: Option<WorldDelta>,
}

/// Exactly two keys on the wire: `timestamp` and `action`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEvent {
    pub timestamp: f64,
    pub action: EventAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionTimeline {
    pub header: TimelineHeader,
    pub events: Vec<TimelineEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub footer: Option<MissionOutcome>,
}

impl MissionTimeline {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("timelines serialize");
        bytes.push(b'\n');
        bytes
    }

    /// The bare event array, for tools that expect only events.
    pub fn to_bare_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(&self.events).expect("events serialize");
        bytes.push(b'\n');
        bytes
    }

    pub fn write(&self, path: &Path) -> Result<(), LogError> {
        std::fs::write(path, self.to_json()).map_err(|e| LogError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TimelineError> {
        let bytes = std::fs::read(path).map_err(|e| TimelineError::io(path, e))?;
        parse_timeline(&bytes)
    }

    /// Every decision trace, in log order.
    pub fn traces(&self) -> impl Iterator<Item = (f64, &DecisionTrace)> {
        self.events.iter().flat_map(|e| {
            e.action
                .decision_traces
                .iter()
                .map(move |t| (e.timestamp, t))
        })
    }

    pub fn end_time(&self) -> f64 {
        self.footer
            .and_then(|f| f.ended_at)
            .or_else(|| self.events.last().map(|e| e.timestamp))
            .unwrap_or(0.0)
    }

    /// World state before any event.
    pub fn initial_world(&self) -> Result<WorldState, crate::world::WorldError> {
        let mut world = WorldState::init(self.header.config.clone())?;
        for entry in &self.header.roster {
            world.insert_agent(entry.id.clone(), entry.kind, entry.can_place, entry.spawn)?;
        }
        Ok(world)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogError {
    #[error("a mission log is already open")]
    AlreadyOpen,
    #[error("no mission log is open")]
    NotOpen,
    #[error("mission has not started: a human and an AI must both join first")]
    GateClosed,
    #[error("outcome must be success or failure to close the log")]
    Ongoing,
    #[error("io failure: {0}")]
    Io(String),
}

/// Applies one event to a world; the inverse of [`diff`].
pub fn apply_event(world: &mut WorldState, event: &TimelineEvent) {
    world.tick = (event.timestamp * world.config.tick_rate_hz as f64).round() as u64;
    for (id, delta) in &event.action.agents {
        if let Some(entry) = &delta.joined {
            let _ = world.insert_agent(entry.id.clone(), entry.kind, entry.can_place, entry.spawn);
        }
        if let Some(agent) = world.agents.get_mut(id) {
            delta.apply(agent);
        }
    }
    if let Some(w) = &event.action.world {
        for change in &w.blocks {
            if let Some(i) = world.index_of(change.cell) {
                world.blocks[i] = change.block.clone();
            }
        }
        if let Some(chest) = &w.chest {
            world.chest = chest.clone();
        }
    }
}

fn agent_delta(prev: Option<&AgentState>, now: &AgentState) -> AgentDelta {
    let Some(prev) = prev else {
        return AgentDelta {
            joined: Some(RosterEntry {
                id: now.id.clone(),
                kind: now.kind,
                can_place: now.can_place,
                spawn: now.position,
            }),
            position: Some(now.position),
            heading: Some(now.heading),
            inventory: Some(now.inventory.clone()),
            activity: Some(now.behavior_state),
            held_item: Some(now.held_item),
            looking_at: Some(now.looking_at),
            doing: Some(now.doing),
            task: Some(now.task),
        };
    };
    let changed = |same: bool| !same;
    AgentDelta {
        joined: None,
        position: changed(prev.position == now.position).then_some(now.position),
        heading: changed(prev.heading == now.heading).then_some(now.heading),
        inventory: changed(prev.inventory == now.inventory).then(|| now.inventory.clone()),
        activity: changed(prev.behavior_state == now.behavior_state).then_some(now.behavior_state),
        held_item: changed(prev.held_item == now.held_item).then_some(now.held_item),
        looking_at: changed(prev.looking_at == now.looking_at).then_some(now.looking_at),
        doing: changed(prev.doing == now.doing).then_some(now.doing),
        task: changed(prev.task == now.task).then_some(now.task),
    }
}

/// True when the change from `prev` to `now` is worth an event by itself.
pub fn is_triggered(prev: &WorldState, now: &WorldState) -> bool {
    let agent_trigger = now.agents.values().any(|a| match prev.agents.get(&a.id) {
        None => true,
        Some(p) => {
            p.position.distance(a.position) >= POSITION_GATE
                || p.inventory != a.inventory
                || p.behavior_state != a.behavior_state
                || p.held_item != a.held_item
        }
    });
    agent_trigger
        || prev.blocks != now.blocks
        || prev.chest != now.chest
        || prev.phase() != now.phase()
}

/// Every field that differs between two states, with the full position of
/// every agent that has any change.
pub fn diff(prev: &WorldState, now: &WorldState) -> EventAction {
    let mut agents = BTreeMap::new();
    for (id, agent) in &now.agents {
        let mut delta = agent_delta(prev.agents.get(id), agent);
        if !delta.is_empty() {
            delta.position = Some(agent.position);
            agents.insert(id.clone(), delta);
        }
    }
    let blocks: Vec<BlockChange> = prev
        .blocks
        .iter()
        .zip(&now.blocks)
        .enumerate()
        .filter(|(_, (a, b))| a != b)
        .map(|(i, (_, b))| BlockChange {
            cell: now.cell_at(i),
            block: b.clone(),
        })
        .collect();
    let world = WorldDelta {
        completion: (!blocks.is_empty()).then(|| now.completion_score()),
        blocks,
        chest: (prev.chest != now.chest).then(|| now.chest.clone()),
        phase: (prev.phase() != now.phase()).then(|| now.phase()),
    };
    EventAction {
        agents,
        decision_traces: Vec::new(),
        chat: Vec::new(),
        world: (!world.is_empty()).then_some(world),
    }
}

/// An open mission log.
#[derive(Debug)]
pub struct MissionLog {
    header: TimelineHeader,
    events: Vec<TimelineEvent>,
    last: WorldState,
    pending_traces: Vec<DecisionTrace>,
    pending_chat: Vec<ChatEntry>,
}

impl MissionLog {
    /// Opens on the first tick at which the start gate holds.
    pub fn open(
        mission_id: impl Into<String>,
        world: &WorldState,
        start_time: Option<String>,
    ) -> Result<Self, LogError> {
        if !world.has_started() {
            return Err(LogError::GateClosed);
        }
        let roster = world
            .agents
            .values()
            .map(|a| RosterEntry {
                id: a.id.clone(),
                kind: a.kind,
                can_place: a.can_place,
                spawn: a.position,
            })
            .collect();
        let header = TimelineHeader {
            v: TIMELINE_VERSION,
            mission_id: mission_id.into(),
            config_digest: world.config.digest(),
            seed: world.config.seed,
            start_time,
            config: world.config.clone(),
            roster,
        };
        let timeline = MissionTimeline {
            header: header.clone(),
            events: Vec::new(),
            footer: None,
        };
        let last = timeline.initial_world().map_err(|e| LogError::Io(e.to_string()))?;
        let mut log = Self {
            header,
            events: Vec::new(),
            last,
            pending_traces: Vec::new(),
            pending_chat: Vec::new(),
        };
        // Anything that differs from a fresh world at open time.
        log.flush(world, true);
        Ok(log)
    }

    pub fn header(&self) -> &TimelineHeader {
        &self.header
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    /// Queues a decision trace for the next recorded event.
    pub fn submit_trace(&mut self, trace: DecisionTrace) {
        self.pending_traces.push(trace);
    }

    pub fn submit_chat(&mut self, from: AgentId, text: String) {
        self.pending_chat.push(ChatEntry { from, text });
    }

    /// Records one event if anything changed; returns whether it did.
    pub fn record(&mut self, world: &WorldState) -> bool {
        self.flush(world, false)
    }

    fn flush(&mut self, world: &WorldState, force_diff: bool) -> bool {
        let triggered = !self.pending_traces.is_empty()
            || !self.pending_chat.is_empty()
            || is_triggered(&self.last, world)
            || (force_diff && self.last != *world);
        if !triggered {
            return false;
        }
        let mut action = diff(&self.last, world);
        action.decision_traces = std::mem::take(&mut self.pending_traces);
        action.chat = std::mem::take(&mut self.pending_chat);
        if action == EventAction::default() {
            return false;
        }
        self.events.push(TimelineEvent {
            timestamp: world.clock(),
            action,
        });
        self.last = world.clone();
        true
    }

    /// Records the final state and seals the log.
    pub fn close(mut self, world: &WorldState, outcome: MissionOutcome) -> Result<MissionTimeline, LogError> {
        if outcome.status == MissionStatus::Ongoing {
            return Err(LogError::Ongoing);
        }
        self.flush(world, true);
        Ok(MissionTimeline {
            header: self.header,
            events: self.events,
            footer: Some(outcome),
        })
    }
}

/// Holds at most one open log; enforces open-once and close-once.
#[derive(Debug, Default)]
pub struct LogSlot {
    open: Option<MissionLog>,
    closed: bool,
}

impl LogSlot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(
        &mut self,
        mission_id: impl Into<String>,
        world: &WorldState,
        start_time: Option<String>,
    ) -> Result<&mut MissionLog, LogError> {
        if self.open.is_some() || self.closed {
            return Err(LogError::AlreadyOpen);
        }
        Ok(self.open.insert(MissionLog::open(mission_id, world, start_time)?))
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn log_mut(&mut self) -> Option<&mut MissionLog> {
        self.open.as_mut()
    }

    pub fn close(&mut self, world: &WorldState, outcome: MissionOutcome) -> Result<MissionTimeline, LogError> {
        let log = self.open.take().ok_or(LogError::NotOpen)?;
        if outcome.status == MissionStatus::Ongoing {
            self.open = Some(log);
            return Err(LogError::Ongoing);
        }
        self.closed = true;
        log.close(world, outcome)
    }
}
