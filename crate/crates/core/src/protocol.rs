//! Wire protocol between the game server and its clients.
//!
//! Every frame is a 4-byte big-endian length followed by that many bytes of
//! UTF-8 JSON. The JSON object is an [`Envelope`] carrying the schema
//! version `"v": 1`, a per-connection sequence number, the simulation time
//! and a payload tagged by `"type"`.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dt_agent::{ActivityLabel, DecisionTrace};
use crate::world::{
    AgentId, AgentKind, AgentState, Block, Cell, Doing, HeldItem, Inventory, Material,
    MissionConfig, MissionOutcome, Position, Task, WorldState,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Frames larger than this are rejected before parsing.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<P> {
    pub v: u32,
    pub seq: u64,
    pub sim_time: f64,
    pub payload: P,
}

impl<P> Envelope<P> {
    pub fn new(seq: u64, sim_time: f64, payload: P) -> Self {
        Self {
            v: SCHEMA_VERSION,
            seq,
            sim_time,
            payload,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChestDirection {
    Deposit,
    Withdraw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Craftable {
    Pickaxe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionRequest {
    MoveTo {
        target: Cell,
    },
    Mine {
        target: Cell,
    },
    Craft {
        item: Craftable,
    },
    Chest {
        direction: ChestDirection,
        material: Material,
        n: u32,
    },
    Place {
        target: Cell,
        material: Material,
    },
    Idle,
}

impl ActionRequest {
    pub fn is_place(&self) -> bool {
        matches!(self, ActionRequest::Place { .. })
    }
}

/// What every client sees of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub id: AgentId,
    pub kind: AgentKind,
    pub can_place: bool,
    pub position: Position,
    pub inventory: Inventory,
    pub held_item: HeldItem,
    pub looking_at: Option<Cell>,
    pub behavior_state: ActivityLabel,
    pub doing: Doing,
    pub task: Option<Task>,
}

impl From<&AgentState> for AgentView {
    fn from(a: &AgentState) -> Self {
        Self {
            id: a.id.clone(),
            kind: a.kind,
            can_place: a.can_place,
            position: a.position,
            inventory: a.inventory.clone(),
            held_item: a.held_item,
            looking_at: a.looking_at,
            behavior_state: a.behavior_state,
            doing: a.doing,
            task: a.task,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerView {
    pub cell: Cell,
    pub material: Material,
    pub remaining: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub completion: f64,
    pub clock: f64,
    pub phase: u8,
    pub chest: BTreeMap<Material, u32>,
    pub towers: Vec<TowerView>,
    pub placed: Vec<Cell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub agents: Vec<AgentView>,
    pub world: WorldSummary,
}

impl StateUpdate {
    pub fn from_world(world: &WorldState) -> Self {
        let towers = world
            .config
            .towers
            .iter()
            .map(|t| TowerView {
                cell: t.cell,
                material: t.material,
                remaining: match world.block(t.cell) {
                    Some(Block::Tower { remaining, .. }) => *remaining,
                    _ => 0,
                },
            })
            .collect();
        Self {
            agents: world.agents.values().map(AgentView::from).collect(),
            world: WorldSummary {
                completion: world.completion_score(),
                clock: world.clock(),
                phase: world.phase(),
                chest: world.chest.clone(),
                towers,
                placed: world.placed_cells(),
            },
        }
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentView> {
        self.agents.iter().find(|a| &a.id == id)
    }

    pub fn first_of_kind(&self, kind: AgentKind) -> Option<&AgentView> {
        self.agents.iter().find(|a| a.kind == kind)
    }

    pub fn chest_count(&self, material: Material) -> u32 {
        self.world.chest.get(&material).copied().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    ProtocolViolation,
    JoinRejected,
    MalformedFrame,
    UnknownVariant,
    SchemaVersionMismatch,
    ActionRejected,
    AgentLeft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Joined {
        agent_id: AgentId,
        kind: AgentKind,
        mission: Box<MissionConfig>,
    },
    StateUpdate(StateUpdate),
    Chat {
        from: AgentId,
        text: String,
    },
    MissionEnd {
        outcome: MissionOutcome,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Join {
        name: AgentId,
        kind: AgentKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        can_place: Option<bool>,
    },
    Action {
        action: ActionRequest,
    },
    /// Decision provenance from an AI agent, merged into the mission log.
    Trace {
        trace: DecisionTrace,
    },
    Chat {
        text: String,
    },
    Disconnect,
}

/// Payload families that can travel inside an [`Envelope`].
pub trait Payload: Serialize + DeserializeOwned {
    const VARIANTS: &'static [&'static str];
}

impl Payload for ServerMessage {
    const VARIANTS: &'static [&'static str] =
        &["joined", "state_update", "chat", "mission_end", "error"];
}

impl Payload for ClientMessage {
    const VARIANTS: &'static [&'static str] = &["join", "action", "trace", "chat", "disconnect"];
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message variant `{0}`")]
    UnknownVariant(String),
    #[error("schema version mismatch: expected {expected}, got {got}")]
    SchemaVersionMismatch { expected: u32, got: String },
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::MalformedFrame(_) => ErrorCode::MalformedFrame,
            ProtocolError::UnknownVariant(_) => ErrorCode::UnknownVariant,
            ProtocolError::SchemaVersionMismatch { .. } => ErrorCode::SchemaVersionMismatch,
        }
    }
}

pub fn encode<P: Payload>(msg: &Envelope<P>) -> Vec<u8> {
    let json = serde_json::to_vec(msg).expect("protocol messages serialize");
    let mut frame = Vec::with_capacity(json.len() + 4);
    frame.extend_from_slice(&(json.len() as u32).to_be_bytes());
    frame.extend_from_slice(&json);
    frame
}

/// Decodes exactly one frame.
pub fn decode<P: Payload>(frame: &[u8]) -> Result<Envelope<P>, ProtocolError> {
    let Some((header, body)) = frame.split_first_chunk::<4>() else {
        return Err(ProtocolError::MalformedFrame(format!(
            "{} bytes is shorter than the length prefix",
            frame.len()
        )));
    };
    let declared = u32::from_be_bytes(*header) as usize;
    if declared != body.len() {
        return Err(ProtocolError::MalformedFrame(format!(
            "length prefix says {declared} bytes, frame carries {}",
            body.len()
        )));
    }
    decode_json(body)
}

/// Decodes the JSON body of a frame, without the length prefix.
pub fn decode_json<P: Payload>(body: &[u8]) -> Result<Envelope<P>, ProtocolError> {
    let value: serde_json::Value = serde_json::from_slice(body)
        .map_err(|e| ProtocolError::MalformedFrame(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ProtocolError::MalformedFrame("envelope is not an object".into()))?;
    match obj.get("v") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        other => {
            return Err(ProtocolError::SchemaVersionMismatch {
                expected: SCHEMA_VERSION,
                got: other.map_or_else(|| "missing".to_string(), |v| v.to_string()),
            })
        }
    }
    let tag = obj
        .get("payload")
        .and_then(|p| p.get("type"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| ProtocolError::MalformedFrame("payload has no type tag".into()))?;
    if !P::VARIANTS.contains(&tag) {
        return Err(ProtocolError::UnknownVariant(tag.to_string()));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::MalformedFrame(e.to_string()))
}

/// Splits a byte stream into frames.
#[derive(Debug, Default)]
pub struct FrameBuffer {
    buf: Vec<u8>,
}

impl FrameBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete frame, length prefix included.
    pub fn next_frame(&mut self) -> Result<Option<Vec<u8>>, ProtocolError> {
        let Some(header) = self.buf.first_chunk::<4>() else {
            return Ok(None);
        };
        let len = u32::from_be_bytes(*header) as usize;
        if len > MAX_FRAME_LEN {
            return Err(ProtocolError::MalformedFrame(format!(
                "frame of {len} bytes exceeds limit"
            )));
        }
        if self.buf.len() < len + 4 {
            return Ok(None);
        }
        Ok(Some(self.buf.drain(..len + 4).collect()))
    }
}

/// Stamps outgoing envelopes with a strictly increasing sequence number.
#[derive(Debug, Default)]
pub struct Sequencer {
    next: u64,
}

impl Sequencer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrap<P>(&mut self, sim_time: f64, payload: P) -> Envelope<P> {
        let seq = self.next;
        self.next += 1;
        Envelope::new(seq, sim_time, payload)
    }
}

/// True once at least one human and one AI have joined.
pub fn mission_start_gate(kinds: impl IntoIterator<Item = AgentKind>) -> bool {
    let (mut human, mut ai) = (false, false);
    for kind in kinds {
        match kind {
            AgentKind::Human => human = true,
            AgentKind::Ai => ai = true,
        }
    }
    human && ai
}
