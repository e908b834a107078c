//! The white-box decision-tree teammate.
//!
//! Each broadcast the agent labels what the human is doing, picks the tree
//! for the current phase, walks it from the root to a skill leaf and records
//! the path it took. While a skill is still running (walking a path, mining
//! a batch) no new decision is made.

mod policy;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use policy::{
    MaterialRef, Node, PhaseTree, PolicyError, Predicate, Skill, DecisionTreePolicy,
    REFERENCE_POLICY,
};

use crate::protocol::{ActionRequest, AgentView};
use crate::skills::{Controller, ControllerOutput, Executor, Observation};
use crate::world::{
    AgentId, AgentKind, AgentState, Cell, Doing, HeldItem, Material, MissionConfig, Position, Task,
};

/// Radius used by the activity table, in cells.
pub const LANDMARK_RADIUS: f64 = 2.0;

/// What an agent appears to be doing. Serialized as `gathering:wood`,
/// `crafting`, `building`, `at_chest`, `traveling` or `idle`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActivityLabel {
    Gathering(Material),
    Crafting,
    Building,
    AtChest,
    Traveling,
    Idle,
}

impl fmt::Display for ActivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivityLabel::Gathering(m) => write!(f, "gathering:{m}"),
            ActivityLabel::Crafting => f.write_str("crafting"),
            ActivityLabel::Building => f.write_str("building"),
            ActivityLabel::AtChest => f.write_str("at_chest"),
            ActivityLabel::Traveling => f.write_str("traveling"),
            ActivityLabel::Idle => f.write_str("idle"),
        }
    }
}

impl FromStr for ActivityLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "crafting" => Ok(ActivityLabel::Crafting),
            "building" => Ok(ActivityLabel::Building),
            "at_chest" => Ok(ActivityLabel::AtChest),
            "traveling" => Ok(ActivityLabel::Traveling),
            "idle" => Ok(ActivityLabel::Idle),
            other => match other.strip_prefix("gathering:") {
                Some(m) => Ok(ActivityLabel::Gathering(m.parse()?)),
                None => Err(format!("unknown activity `{other}`")),
            },
        }
    }
}

impl Serialize for ActivityLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActivityLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// Fixed points of interest taken from the mission layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Landmarks {
    /// `(name, cell, material)` per tower, in config order.
    pub towers: Vec<(String, Cell, Material)>,
    pub crafting_table: Cell,
    pub chest: Cell,
    pub plan_centroid: Position,
    pub plan_cells: Vec<Cell>,
}

impl Landmarks {
    pub fn from_config(config: &MissionConfig) -> Self {
        let mut plan_cells: Vec<Cell> = config.plan.cells().map(|(c, _, _)| c).collect();
        plan_cells.sort();
        Self {
            towers: config
                .towers
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("tower_{i}_{}", t.material), t.cell, t.material))
                .collect(),
            crafting_table: config.crafting_table,
            chest: config.chest,
            plan_centroid: config.plan.centroid(),
            plan_cells,
        }
    }

    /// Distance from `at` to every landmark, keyed by landmark name.
    pub fn proximity(&self, at: Position) -> BTreeMap<String, f64> {
        let mut map: BTreeMap<String, f64> = self
            .towers
            .iter()
            .map(|(name, cell, _)| (name.clone(), at.distance_to_cell(*cell)))
            .collect();
        map.insert("crafting_table".into(), at.distance_to_cell(self.crafting_table));
        map.insert("chest".into(), at.distance_to_cell(self.chest));
        map.insert("plan_centroid".into(), at.distance(self.plan_centroid));
        map
    }

    fn near_plan(&self, cell: Cell) -> bool {
        self.plan_cells.iter().any(|&p| p.chebyshev(cell) <= 1)
    }
}

/// The observable fields the activity table looks at.
#[derive(Clone, Copy, Debug)]
pub struct ActivityInputs {
    pub position: Position,
    pub doing: Doing,
    pub task: Option<Task>,
    pub held_item: HeldItem,
    pub looking_at: Option<Cell>,
}

impl From<&AgentState> for ActivityInputs {
    fn from(a: &AgentState) -> Self {
        Self {
            position: a.position,
            doing: a.doing,
            task: a.task,
            held_item: a.held_item,
            looking_at: a.looking_at,
        }
    }
}

impl From<&AgentView> for ActivityInputs {
    fn from(a: &AgentView) -> Self {
        Self {
            position: a.position,
            doing: a.doing,
            task: a.task,
            held_item: a.held_item,
            looking_at: a.looking_at,
        }
    }
}

/// Ordered table, first match wins.
pub fn classify(inputs: ActivityInputs, landmarks: &Landmarks) -> ActivityLabel {
    let pos = inputs.position;
    let near = |cell: Cell| pos.distance_to_cell(cell) <= LANDMARK_RADIUS;
    let mining = inputs.doing == Doing::Mining || matches!(inputs.task, Some(Task::Mine { .. }));
    if mining {
        let looked = landmarks
            .towers
            .iter()
            .find(|(_, cell, _)| Some(*cell) == inputs.looking_at && near(*cell));
        let nearest = landmarks
            .towers
            .iter()
            .filter(|(_, cell, _)| near(*cell))
            .min_by(|a, b| pos.distance_to_cell(a.1).total_cmp(&pos.distance_to_cell(b.1)));
        if let Some((_, _, material)) = looked.or(nearest) {
            return ActivityLabel::Gathering(*material);
        }
    }
    if near(landmarks.crafting_table) && inputs.doing == Doing::Crafting {
        return ActivityLabel::Crafting;
    }
    if landmarks.near_plan(pos.cell()) && matches!(inputs.held_item, HeldItem::Material(_)) {
        return ActivityLabel::Building;
    }
    if near(landmarks.chest) {
        return ActivityLabel::AtChest;
    }
    if inputs.doing == Doing::Moving {
        return ActivityLabel::Traveling;
    }
    ActivityLabel::Idle
}

pub fn classify_activity(agent: &AgentState, landmarks: &Landmarks) -> ActivityLabel {
    classify(agent.into(), landmarks)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanInference {
    pub activity: ActivityLabel,
    pub proximity: BTreeMap<String, f64>,
}

pub fn infer_human_behavior(human: &AgentView, landmarks: &Landmarks) -> HumanInference {
    HumanInference {
        activity: classify(human.into(), landmarks),
        proximity: landmarks.proximity(human.position),
    }
}

/// `1 + |{t_i <= completion}|`, so a threshold is crossed the moment
/// completion reaches it.
pub fn current_phase(completion: f64, thresholds: &[f64; 4]) -> u8 {
    1 + thresholds.iter().filter(|&&t| t <= completion).count() as u8
}

/// Strictly ascending thresholds inside `(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct PhaseThresholds([f64; 4]);

impl PhaseThresholds {
    pub const DEFAULT: PhaseThresholds = PhaseThresholds([0.2, 0.4, 0.6, 0.8]);

    pub fn new(t: [f64; 4]) -> Result<Self, String> {
        let in_range = t.iter().all(|&x| x > 0.0 && x < 1.0);
        let ascending = t.windows(2).all(|w| w[0] < w[1]);
        if in_range && ascending {
            Ok(Self(t))
        } else {
            Err(format!("thresholds {t:?} must be strictly ascending in (0, 1)"))
        }
    }

    pub fn values(&self) -> &[f64; 4] {
        &self.0
    }

    pub fn phase(&self, completion: f64) -> u8 {
        current_phase(completion, &self.0)
    }
}

impl Default for PhaseThresholds {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<[f64; 4]> for PhaseThresholds {
    type Error = String;

    fn try_from(t: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(t)
    }
}

impl From<PhaseThresholds> for [f64; 4] {
    fn from(t: PhaseThresholds) -> Self {
        t.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStep {
    pub node: String,
    pub result: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub agent: AgentId,
    pub sim_time: f64,
    pub phase: u8,
    pub active_branch: Vec<BranchStep>,
    pub selected_node: String,
    pub emitted_action: ActionRequest,
}

/// One decision: walks the phase tree and turns the chosen leaf into its
/// first action. Pure in `(policy, obs)`.
pub fn decide(policy: &DecisionTreePolicy, obs: &Observation<'_>) -> (ActionRequest, DecisionTrace) {
    let (action, trace, _) = decide_with_executor(policy, obs);
    (action, trace)
}

fn decide_with_executor(
    policy: &DecisionTreePolicy,
    obs: &Observation<'_>,
) -> (ActionRequest, DecisionTrace, Executor) {
    let phase = current_phase(obs.update.world.completion, &obs.mission.phase_thresholds);
    let (leaf, branch) = policy.evaluate(phase, obs);
    let mut executor = Executor::with_steps(true, leaf.skill.as_ref().expect("leaf has a skill").steps(obs));
    let action = executor.next_action(obs).unwrap_or(ActionRequest::Idle);
    let trace = DecisionTrace {
        agent: obs.me.clone(),
        sim_time: obs.sim_time(),
        phase,
        active_branch: branch,
        selected_node: leaf.name.clone(),
        emitted_action: action,
    };
    (action, trace, executor)
}

/// Drives [`decide`] from a stream of state updates.
#[derive(Debug)]
pub struct DtAgent {
    id: AgentId,
    policy: DecisionTreePolicy,
    executor: Executor,
    decisions: u64,
}

impl DtAgent {
    pub fn new(id: AgentId, policy: DecisionTreePolicy) -> Self {
        Self {
            id,
            policy,
            executor: Executor::new(true),
            decisions: 0,
        }
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    pub fn policy(&self) -> &DecisionTreePolicy {
        &self.policy
    }
}

impl Controller for DtAgent {
    fn id(&self) -> &AgentId {
        &self.id
    }

    fn kind(&self) -> AgentKind {
        AgentKind::Ai
    }

    fn on_update(&mut self, obs: &Observation<'_>) -> ControllerOutput {
        if obs.me().is_none() {
            return ControllerOutput::default();
        }
        if !self.executor.is_idle() {
            if let Some(action) = self.executor.next_action(obs) {
                return ControllerOutput {
                    action: Some(action),
                    ..ControllerOutput::default()
                };
            }
            if !self.executor.is_idle() {
                return ControllerOutput::default();
            }
        }
        let (action, trace, executor) = decide_with_executor(&self.policy, obs);
        self.executor = executor;
        self.decisions += 1;
        ControllerOutput {
            action: Some(action),
            traces: vec![trace],
            chat: Vec::new(),
        }
    }
}
