//! Declarative per-phase decision trees, loaded from TOML.
//!
//! ```toml
//! name = "example"
//!
//! [[phase]]
//! phase = 1
//! root = "done"
//!
//! [[phase.node]]
//! name = "done"
//! predicate = { kind = "mission_complete" }
//! if_true = "rest"
//! if_false = "rest"
//!
//! [[phase.node]]
//! name = "rest"
//! skill = { kind = "idle" }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::{infer_human_behavior, ActivityLabel, BranchStep, DecisionTrace, Landmarks};
use crate::skills::{Landmark, Observation, Step};
use crate::world::Material;

/// The shipped five-phase policy.
pub const REFERENCE_POLICY: &str = include_str!("../../policies/reference.toml");

/// A material named directly or relative to the build state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaterialRef {
    Literal(Material),
    /// Material of the first layer with unplaced cells.
    CurrentLayer,
    /// Material of the first later layer, differing from the current one,
    /// that still needs gathering.
    NextLayer,
    /// First still-needed material, in build order, that the human is not
    /// gathering.
    Complement,
}

impl fmt::Display for MaterialRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaterialRef::Literal(m) => write!(f, "{m}"),
            MaterialRef::CurrentLayer => f.write_str("current_layer"),
            MaterialRef::NextLayer => f.write_str("next_layer"),
            MaterialRef::Complement => f.write_str("complement"),
        }
    }
}

impl FromStr for MaterialRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "current_layer" => Ok(MaterialRef::CurrentLayer),
            "next_layer" => Ok(MaterialRef::NextLayer),
            "complement" => Ok(MaterialRef::Complement),
            other => other.parse().map(MaterialRef::Literal),
        }
    }
}

impl Serialize for MaterialRef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MaterialRef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Predicate {
    MissionComplete,
    HasPickaxe,
    /// Own inventory holds at least `count` of the material.
    CarryingAtLeast { material: MaterialRef, count: u32 },
    /// Own inventory holds at least `count` units in total.
    CarryingTotalAtLeast { count: u32 },
    /// The human is labelled `gathering(material)`.
    HumanGathering { material: MaterialRef },
    /// The human's activity label equals `activity`; `gathering` matches
    /// any material.
    HumanActivity { activity: String },
    ChestBelow { material: MaterialRef, count: u32 },
    /// Unplaced cells of the material outnumber what the team holds.
    StillNeeded { material: MaterialRef },
    Near { landmark: Landmark, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Skill {
    /// Mine until carrying `batch` units, capped by what is still needed.
    Gather { material: MaterialRef, batch: u32 },
    CraftPickaxe,
    /// Deposit one material, or everything when `material` is absent.
    Deposit {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        material: Option<MaterialRef>,
    },
    Navigate { to: Landmark },
    /// Stand still for `seconds` before deciding again.
    Idle {
        #[serde(default = "default_idle_seconds")]
        seconds: f64,
    },
}

fn default_idle_seconds() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<Predicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub if_true: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub if_false: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<Skill>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.skill.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseTree {
    pub phase: u8,
    pub root: String,
    #[serde(rename = "node")]
    pub nodes: Vec<Node>,
}

impl PhaseTree {
    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionTreePolicy {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(rename = "phase")]
    pub phases: Vec<PhaseTree>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("could not parse policy: {0}")]
    Parse(String),
    #[error("could not read policy: {0}")]
    Io(String),
    #[error("phase {0}: {1}")]
    Phase(u8, String),
    #[error("{0}")]
    Invalid(String),
}

impl DecisionTreePolicy {
    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_POLICY).expect("reference policy is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PolicyError> {
        let policy: Self = toml::from_str(text).map_err(|e| PolicyError::Parse(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn tree(&self, phase: u8) -> Option<&PhaseTree> {
        self.phases.iter().find(|t| t.phase == phase)
    }

    /// Exactly phases 1..=5; every tree total, finite and acyclic.
    pub fn validate(&self) -> Result<(), PolicyError> {
        let phases: BTreeSet<u8> = self.phases.iter().map(|t| t.phase).collect();
        if phases.len() != self.phases.len() || phases != (1..=5).collect() {
            return Err(PolicyError::Invalid(format!(
                "policy must define phases 1..=5 exactly once, found {:?}",
                self.phases.iter().map(|t| t.phase).collect::<Vec<_>>()
            )));
        }
        for tree in &self.phases {
            validate_tree(tree).map_err(|msg| PolicyError::Phase(tree.phase, msg))?;
        }
        Ok(())
    }

    /// Root-to-leaf walk for `phase`.
    pub fn evaluate(&self, phase: u8, obs: &Observation<'_>) -> (&Node, Vec<BranchStep>) {
        let tree = self.tree(phase).expect("validated policies define every phase");
        let ctx = Context::new(obs);
        let mut node = tree.node(&tree.root).expect("validated root");
        let mut branch = Vec::new();
        while let Some(pred) = &node.predicate {
            let result = ctx.holds(pred);
            branch.push(BranchStep {
                node: node.name.clone(),
                result,
            });
            let next = if result { &node.if_true } else { &node.if_false };
            node = tree
                .node(next.as_deref().expect("validated internal node"))
                .expect("validated reference");
        }
        (node, branch)
    }

    /// True when the trace's branch is a root-to-leaf path of its phase tree.
    pub fn is_valid_trace(&self, trace: &DecisionTrace) -> bool {
        let Some(tree) = self.tree(trace.phase) else {
            return false;
        };
        let mut expected = tree.root.as_str();
        for step in &trace.active_branch {
            let Some(node) = tree.node(expected) else {
                return false;
            };
            if node.name != step.node || node.predicate.is_none() {
                return false;
            }
            let next = if step.result { &node.if_true } else { &node.if_false };
            match next {
                Some(n) => expected = n,
                None => return false,
            }
        }
        expected == trace.selected_node && tree.node(expected).is_some_and(Node::is_leaf)
    }
}

fn validate_tree(tree: &PhaseTree) -> Result<(), String> {
    let mut names = BTreeMap::new();
    for node in &tree.nodes {
        if names.insert(node.name.as_str(), node).is_some() {
            return Err(format!("duplicate node `{}`", node.name));
        }
        let internal = node.predicate.is_some()
            && node.if_true.is_some()
            && node.if_false.is_some()
            && node.skill.is_none();
        let leaf = node.skill.is_some()
            && node.predicate.is_none()
            && node.if_true.is_none()
            && node.if_false.is_none();
        if !internal && !leaf {
            return Err(format!(
                "node `{}` must have either a predicate with if_true and if_false, or a skill",
                node.name
            ));
        }
    }
    if !names.contains_key(tree.root.as_str()) {
        return Err(format!("root `{}` is not defined", tree.root));
    }
    for node in &tree.nodes {
        for child in [&node.if_true, &node.if_false].into_iter().flatten() {
            if !names.contains_key(child.as_str()) {
                return Err(format!("node `{}` refers to undefined `{child}`", node.name));
            }
        }
    }
    // Depth-first search from the root; a grey node seen again is a cycle.
    fn visit<'a>(
        name: &'a str,
        names: &BTreeMap<&'a str, &'a Node>,
        state: &mut BTreeMap<&'a str, bool>,
    ) -> Result<(), String> {
        match state.get(name) {
            Some(false) => return Err(format!("cycle through `{name}`")),
            Some(true) => return Ok(()),
            None => {}
        }
        state.insert(name, false);
        let node = names[name];
        for child in [&node.if_true, &node.if_false].into_iter().flatten() {
            visit(child, names, state)?;
        }
        state.insert(name, true);
        Ok(())
    }
    let mut state = BTreeMap::new();
    visit(&tree.root, &names, &mut state)
}

/// Per-decision facts shared by every predicate.
struct Context<'o, 'a> {
    obs: &'o Observation<'a>,
    human_activity: Option<ActivityLabel>,
}

impl<'o, 'a> Context<'o, 'a> {
    fn new(obs: &'o Observation<'a>) -> Self {
        let landmarks = Landmarks::from_config(obs.mission);
        let human_activity = obs
            .human()
            .map(|h| infer_human_behavior(h, &landmarks).activity);
        Self {
            obs,
            human_activity,
        }
    }

    fn human_gathering(&self) -> Option<Material> {
        match self.human_activity {
            Some(ActivityLabel::Gathering(m)) => Some(m),
            _ => None,
        }
    }

    fn resolve(&self, r: MaterialRef) -> Option<Material> {
        resolve_material(r, self.obs, self.human_gathering())
    }

    fn carrying(&self, m: Material) -> u32 {
        self.obs.me().map_or(0, |me| me.inventory.count(m))
    }

    fn holds(&self, pred: &Predicate) -> bool {
        let obs = self.obs;
        match pred {
            Predicate::MissionComplete => obs.update.world.completion >= 1.0,
            Predicate::HasPickaxe => obs.me().is_some_and(|me| me.inventory.has_pickaxe()),
            Predicate::CarryingAtLeast { material, count } => self
                .resolve(*material)
                .is_some_and(|m| self.carrying(m) >= *count),
            Predicate::CarryingTotalAtLeast { count } => {
                obs.me().is_some_and(|me| me.inventory.total() >= *count)
            }
            Predicate::HumanGathering { material } => self
                .human_gathering()
                .is_some_and(|g| Some(g) == self.resolve(*material)),
            Predicate::HumanActivity { activity } => match self.human_activity {
                Some(ActivityLabel::Gathering(_)) if activity == "gathering" => true,
                Some(label) => label.to_string() == *activity,
                None => false,
            },
            Predicate::ChestBelow { material, count } => self
                .resolve(*material)
                .is_some_and(|m| obs.update.chest_count(m) < *count),
            Predicate::StillNeeded { material } => self
                .resolve(*material)
                .is_some_and(|m| obs.still_needed(m) > 0),
            Predicate::Near { landmark, radius } => {
                let Some(me) = obs.me() else { return false };
                let target = match landmark {
                    Landmark::Chest => Some(obs.mission.chest.center()),
                    Landmark::CraftingTable => Some(obs.mission.crafting_table.center()),
                    Landmark::Plan => Some(obs.mission.plan.centroid()),
                    Landmark::Human => obs.human().map(|h| h.position),
                    Landmark::Tower(m) => obs
                        .mission
                        .towers
                        .iter()
                        .filter(|t| t.material == *m)
                        .map(|t| t.cell.center())
                        .min_by(|a, b| {
                            me.position.distance(*a).total_cmp(&me.position.distance(*b))
                        }),
                };
                target.is_some_and(|p| me.position.distance(p) <= *radius)
            }
        }
    }
}

fn resolve_material(
    r: MaterialRef,
    obs: &Observation<'_>,
    human_gathering: Option<Material>,
) -> Option<Material> {
    match r {
        MaterialRef::Literal(m) => Some(m),
        MaterialRef::CurrentLayer => obs.current_layer().and_then(|i| obs.layer_material(i)),
        MaterialRef::NextLayer => {
            let current = obs.current_layer()?;
            let here = obs.layer_material(current)?;
            obs.mission.plan.layers[current + 1..]
                .iter()
                .map(|l| l.material)
                .find(|&m| m != here && obs.still_needed(m) > 0)
        }
        MaterialRef::Complement => {
            let current = obs.current_layer()?;
            obs.mission.plan.layers[current..]
                .iter()
                .map(|l| l.material)
                .find(|&m| Some(m) != human_gathering && obs.still_needed(m) > 0)
        }
    }
}

impl Skill {
    /// Executor steps for this skill given the current observation.
    pub fn steps(&self, obs: &Observation<'_>) -> Vec<Step> {
        let landmarks = Landmarks::from_config(obs.mission);
        let human_gathering = obs.human().and_then(|h| {
            match infer_human_behavior(h, &landmarks).activity {
                ActivityLabel::Gathering(m) => Some(m),
                _ => None,
            }
        });
        let Some(me) = obs.me() else {
            return Vec::new();
        };
        match self {
            Skill::Gather { material, batch } => {
                let Some(m) = resolve_material(*material, obs, human_gathering) else {
                    return vec![Step::Wait { seconds: default_idle_seconds() }];
                };
                let own = me.inventory.count(m);
                let until = (*batch).min(own + obs.still_needed(m));
                if until <= own {
                    return vec![Step::Wait { seconds: default_idle_seconds() }];
                }
                // Leftovers from an earlier target go where the human can use them.
                let mut steps: Vec<Step> = me
                    .inventory
                    .counts
                    .iter()
                    .filter(|&(&other, &n)| other != m && n > 0)
                    .map(|(&other, _)| Step::Deposit { material: other, n: None })
                    .collect();
                steps.push(Step::Mine { material: m, until });
                steps
            }
            Skill::CraftPickaxe => vec![
                Step::Mine {
                    material: Material::Wood,
                    until: obs.mission.pickaxe_wood_cost,
                },
                Step::CraftPickaxe,
            ],
            Skill::Deposit { material: None } => vec![Step::DepositAll],
            Skill::Deposit {
                material: Some(r),
            } => match resolve_material(*r, obs, human_gathering) {
                Some(m) => vec![Step::Deposit { material: m, n: None }],
                None => vec![Step::Wait { seconds: default_idle_seconds() }],
            },
            Skill::Navigate { to } => vec![Step::GoTo(*to)],
            Skill::Idle { seconds } => vec![Step::Wait { seconds: *seconds }],
        }
    }
}
