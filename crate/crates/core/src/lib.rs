//! Human-machine teaming testbed: a collaborative house-building world,
//! the agents that play in it, event-based mission logging, deterministic
//! replay and an after-action explanation service core.

pub mod aae;
pub mod command_agent;
pub mod dt_agent;
pub mod episode;
pub mod llm;
pub mod mission_log;
pub mod pathfinding;
pub mod protocol;
pub mod replay;
pub mod skills;
pub mod world;

pub use world::{
    ActionError, AgentId, AgentKind, AgentState, Block, Cell, Material, MissionConfig,
    MissionOutcome, MissionStatus, Position, WorldError, WorldState,
};
