//! The authoritative house-building world.
//!
//! The world is a 2.5-D voxel grid: one block per cell at walking height,
//! with floor-plan cells grouped into ordered layers. Time advances in
//! fixed ticks; the clock is `tick / tick_rate_hz` seconds of simulation
//! time.

mod config;
mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dt_agent::ActivityLabel;

pub use config::{
    CollaborationRequirement, ConfigError, FloorPlan, MiningConfig, MissionConfig, PlanLayer,
    SpawnArea, TowerSpec,
};
pub use sim::{Rejection, StepReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Wood,
    Stone,
    Brick,
}

impl Material {
    pub const ALL: [Material; 3] = [Material::Wood, Material::Stone, Material::Brick];

    pub fn as_str(self) -> &'static str {
        match self {
            Material::Wood => "wood",
            Material::Stone => "stone",
            Material::Brick => "brick",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wood" | "log" | "logs" | "planks" => Ok(Material::Wood),
            "stone" | "cobblestone" | "cobble" => Ok(Material::Stone),
            "brick" | "bricks" => Ok(Material::Brick),
            other => Err(format!("unknown material `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Pickaxe,
}

/// Integer voxel coordinates, serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[i32; 2]", into = "[i32; 2]")]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn center(self) -> Position {
        Position::new(self.x as f64 + 0.5, self.y as f64 + 0.5)
    }

    pub fn manhattan(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    pub fn chebyshev(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x).max(self.y.abs_diff(other.y))
    }

    pub fn offset(self, dx: i32, dy: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy)
    }
}

impl From<[i32; 2]> for Cell {
    fn from([x, y]: [i32; 2]) -> Self {
        Cell::new(x, y)
    }
}

impl From<Cell> for [i32; 2] {
    fn from(c: Cell) -> Self {
        [c.x, c.y]
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// Continuous world coordinates in cell units, serialized as `[x, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn cell(self) -> Cell {
        Cell::new(self.x.floor() as i32, self.y.floor() as i32)
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_to_cell(self, cell: Cell) -> f64 {
        self.distance(cell.center())
    }
}

impl From<[f64; 2]> for Position {
    fn from([x, y]: [f64; 2]) -> Self {
        Position::new(x, y)
    }
}

impl From<Position> for [f64; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

/// Facing direction; north is `-y`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heading {
    North,
    East,
    #[default]
    South,
    West,
}

impl Heading {
    pub fn from_delta(dx: f64, dy: f64) -> Option<Heading> {
        if dx == 0.0 && dy == 0.0 {
            return None;
        }
        Some(if dx.abs() >= dy.abs() {
            if dx > 0.0 {
                Heading::East
            } else {
                Heading::West
            }
        } else if dy > 0.0 {
            Heading::South
        } else {
            Heading::North
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AgentId(String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Result<Self, WorldError> {
        let id = id.into();
        let valid = !id.is_empty()
            && id.len() <= 64
            && id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.');
        if valid {
            Ok(Self(id))
        } else {
            Err(WorldError::InvalidAgentId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for AgentId {
    type Error = WorldError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        AgentId::new(value)
    }
}

impl From<AgentId> for String {
    fn from(id: AgentId) -> Self {
        id.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Human,
    Ai,
}

/// What an agent occupies a cell with at walking height.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Block {
    Air,
    Ground,
    Marker(Material),
    Tower { material: Material, remaining: u32 },
    CraftingTable,
    Chest,
    Placed { material: Material, by: AgentId },
}

impl Block {
    pub fn is_solid(&self) -> bool {
        matches!(
            self,
            Block::Tower { .. } | Block::CraftingTable | Block::Chest | Block::Placed { .. }
        )
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::Air => f.write_str("air"),
            Block::Ground => f.write_str("ground"),
            Block::Marker(m) => write!(f, "marker:{m}"),
            Block::Tower {
                material,
                remaining,
            } => write!(f, "tower:{material}:{remaining}"),
            Block::CraftingTable => f.write_str("crafting_table"),
            Block::Chest => f.write_str("chest"),
            Block::Placed { material, by } => write!(f, "placed:{material}:{by}"),
        }
    }
}

impl FromStr for Block {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let material = |p: &str| p.parse::<Material>();
        match parts.as_slice() {
            ["air"] => Ok(Block::Air),
            ["ground"] => Ok(Block::Ground),
            ["crafting_table"] => Ok(Block::CraftingTable),
            ["chest"] => Ok(Block::Chest),
            ["marker", m] => Ok(Block::Marker(material(m)?)),
            ["tower", m, n] => Ok(Block::Tower {
                material: material(m)?,
                remaining: n.parse().map_err(|e| format!("tower count: {e}"))?,
            }),
            ["placed", m, by] => Ok(Block::Placed {
                material: material(m)?,
                by: AgentId::new(*by).map_err(|e| e.to_string())?,
            }),
            _ => Err(format!("unknown block `{s}`")),
        }
    }
}

impl Serialize for Block {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Block {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    pub counts: BTreeMap<Material, u32>,
    pub tools: BTreeSet<Tool>,
}

impl Inventory {
    pub fn count(&self, material: Material) -> u32 {
        self.counts.get(&material).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u32 {
        self.counts.values().sum()
    }

    pub fn has_pickaxe(&self) -> bool {
        self.tools.contains(&Tool::Pickaxe)
    }

    pub(crate) fn add(&mut self, material: Material, n: u32) {
        if n > 0 {
            *self.counts.entry(material).or_insert(0) += n;
        }
    }

    pub(crate) fn remove(&mut self, material: Material, n: u32) {
        let left = self.count(material) - n;
        if left == 0 {
            self.counts.remove(&material);
        } else {
            self.counts.insert(material, left);
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "item", rename_all = "snake_case")]
pub enum HeldItem {
    #[default]
    None,
    Material(Material),
    Tool(Tool),
}

/// The primitive an agent spent the last tick on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Doing {
    #[default]
    Idle,
    Moving,
    Mining,
    Crafting,
    Chest,
    Placing,
}

/// A multi-tick action in progress.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Task {
    MoveTo {
        target: Cell,
    },
    Mine {
        target: Cell,
        started_tick: u64,
        ticks_required: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub kind: AgentKind,
    pub can_place: bool,
    pub position: Position,
    pub heading: Heading,
    pub inventory: Inventory,
    pub held_item: HeldItem,
    pub looking_at: Option<Cell>,
    pub behavior_state: ActivityLabel,
    pub doing: Doing,
    pub task: Option<Task>,
}

impl AgentState {
    /// Speed over the last tick is positive exactly when the agent moved.
    pub fn is_moving(&self) -> bool {
        self.doing == Doing::Moving
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissionStatus {
    Ongoing,
    Success,
    Failure,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissionOutcome {
    pub status: MissionStatus,
    pub ended_at: Option<f64>,
    pub final_completion: f64,
}

/// Full authoritative state. Serializing two equal worlds yields identical
/// bytes: every map is ordered and agents are keyed by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub config: MissionConfig,
    pub tick: u64,
    pub blocks: Vec<Block>,
    pub chest: BTreeMap<Material, u32>,
    pub agents: BTreeMap<AgentId, AgentState>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid config: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("unknown agent `{0}`")]
    UnknownAgent(AgentId),
    #[error("agent `{0}` already joined")]
    DuplicateAgent(AgentId),
    #[error("invalid agent id `{0}`")]
    InvalidAgentId(String),
    #[error("tick length {got} does not match 1/tick_rate = {expected}")]
    InvalidDt { got: f64, expected: f64 },
    #[error(transparent)]
    Action(#[from] ActionError),
}

/// Why a single agent action was refused. The world is left unchanged.
#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionError {
    #[error("target is out of reach")]
    OutOfReach,
    #[error("target cannot be mined")]
    NotMineable,
    #[error("inventory is full")]
    InventoryFull,
    #[error("not at the crafting table")]
    NotAtTable,
    #[error("insufficient materials")]
    InsufficientMaterials,
    #[error("agent already has a pickaxe")]
    AlreadyHasPickaxe,
    #[error("chest is full")]
    ChestFull,
    #[error("agent is not allowed to place blocks")]
    CapabilityDenied,
    #[error("plan requires a different material here")]
    WrongMaterial,
    #[error("cell is not part of the floor plan")]
    NotInPlan,
    #[error("cell is occupied")]
    Occupied,
    #[error("target is outside the world")]
    OutOfBounds,
    #[error("target cell is blocked")]
    Blocked,
    #[error("unknown item")]
    UnknownItem,
    #[error("agent has not joined")]
    UnknownAgent,
}
