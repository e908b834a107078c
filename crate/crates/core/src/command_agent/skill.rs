use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::Craftable;
use crate::skills::Landmark;
use crate::world::{Cell, Material, MissionConfig};

/// Longest `say` text the agent will emit.
pub const MAX_SAY_CHARS: usize = 280;

/// One entry of the fixed skill library.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "skill", content = "args", rename_all = "snake_case")]
pub enum SkillCall {
    GoTo { target: Landmark },
    Mine { material: Material, count: u32 },
    Craft { item: Craftable },
    ChestDeposit { material: Material, count: u32 },
    ChestWithdraw { material: Material, count: u32 },
    Place { cell: Cell, material: Material },
    Say { text: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillName {
    GoTo,
    Mine,
    Craft,
    ChestDeposit,
    ChestWithdraw,
    Place,
    Say,
}

impl SkillName {
    pub const ALL: [SkillName; 7] = [
        SkillName::GoTo,
        SkillName::Mine,
        SkillName::Craft,
        SkillName::ChestDeposit,
        SkillName::ChestWithdraw,
        SkillName::Place,
        SkillName::Say,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SkillName::GoTo => "go_to",
            SkillName::Mine => "mine",
            SkillName::Craft => "craft",
            SkillName::ChestDeposit => "chest_deposit",
            SkillName::ChestWithdraw => "chest_withdraw",
            SkillName::Place => "place",
            SkillName::Say => "say",
        }
    }
}

impl fmt::Display for SkillName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SkillName {
    type Err = SkillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        SkillName::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SkillError::UnknownSkill(s.to_string()))
    }
}

impl SkillCall {
    pub fn name(&self) -> SkillName {
        match self {
            SkillCall::GoTo { .. } => SkillName::GoTo,
            SkillCall::Mine { .. } => SkillName::Mine,
            SkillCall::Craft { .. } => SkillName::Craft,
            SkillCall::ChestDeposit { .. } => SkillName::ChestDeposit,
            SkillCall::ChestWithdraw { .. } => SkillName::ChestWithdraw,
            SkillCall::Place { .. } => SkillName::Place,
            SkillCall::Say { .. } => SkillName::Say,
        }
    }
}

impl fmt::Display for SkillCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.name();
        match self {
            SkillCall::GoTo { target } => write!(f, "{name}({})", landmark_label(*target)),
            SkillCall::Mine { material, count }
            | SkillCall::ChestDeposit { material, count }
            | SkillCall::ChestWithdraw { material, count } => write!(f, "{name}({material}, {count})"),
            SkillCall::Craft { .. } => write!(f, "{name}(pickaxe)"),
            SkillCall::Place { cell, material } => write!(f, "{name}({material} at {cell})"),
            SkillCall::Say { text } => write!(f, "{name}({text:?})"),
        }
    }
}

pub fn landmark_label(landmark: Landmark) -> String {
    match landmark {
        Landmark::Chest => "chest".into(),
        Landmark::CraftingTable => "crafting table".into(),
        Landmark::Tower(m) => format!("{m} tower"),
        Landmark::Plan => "house".into(),
        Landmark::Human => "human".into(),
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum SkillError {
    #[error("reply is not a JSON object with `reply` and `skills`: {0}")]
    Malformed(String),
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("skill {index} has bad arguments: {message}")]
    BadArgs { index: usize, message: String },
    #[error("skill `{0}` is not allowed in this mission")]
    Forbidden(SkillName),
    #[error("{skill}: {message}")]
    Invalid { skill: String, message: String },
}

/// What a skill sequence is checked against.
#[derive(Clone, Copy, Debug)]
pub struct Limits<'a> {
    pub mission: &'a MissionConfig,
    pub forbidden: &'a BTreeSet<SkillName>,
}

impl Limits<'_> {
    pub fn allows(&self, name: SkillName) -> bool {
        !self.forbidden.contains(&name)
    }
}

pub fn validate(skill: &SkillCall, limits: &Limits<'_>) -> Result<(), SkillError> {
    let name = skill.name();
    if !limits.allows(name) {
        return Err(SkillError::Forbidden(name));
    }
    let invalid = |message: String| SkillError::Invalid {
        skill: skill.to_string(),
        message,
    };
    let mission = limits.mission;
    match skill {
        SkillCall::GoTo { target: Landmark::Tower(m) } => {
            if !mission.towers.iter().any(|t| t.material == *m) {
                return Err(invalid(format!("there is no {m} tower")));
            }
        }
        SkillCall::GoTo { .. } | SkillCall::Craft { .. } => {}
        SkillCall::Mine { material, count } => {
            if !mission.towers.iter().any(|t| t.material == *material) {
                return Err(invalid(format!("there is no {material} tower")));
            }
            check_count(*count, mission.inventory_capacity).map_err(invalid)?;
        }
        SkillCall::ChestDeposit { count, .. } | SkillCall::ChestWithdraw { count, .. } => {
            check_count(*count, mission.inventory_capacity).map_err(invalid)?;
        }
        SkillCall::Place { cell, material } => match mission.plan.required(*cell) {
            None => return Err(invalid(format!("{cell} is not part of the house"))),
            Some(m) if m != *material => {
                return Err(invalid(format!("{cell} needs {m}, not {material}")));
            }
            Some(_) => {}
        },
        SkillCall::Say { text } => {
            if text.trim().is_empty() {
                return Err(invalid("text is empty".into()));
            }
            if text.chars().count() > MAX_SAY_CHARS {
                return Err(invalid(format!("text is longer than {MAX_SAY_CHARS} characters")));
            }
        }
    }
    Ok(())
}

fn check_count(count: u32, capacity: u32) -> Result<(), String> {
    if count == 0 || count > capacity {
        return Err(format!("count must be between 1 and {capacity}"));
    }
    Ok(())
}

pub fn validate_all(skills: &[SkillCall], limits: &Limits<'_>) -> Result<(), SkillError> {
    skills.iter().try_for_each(|s| validate(s, limits))
}

/// Parses a model reply of the form `{"reply": "...", "skills": [...]}`.
/// Surrounding prose and code fences are tolerated.
pub fn parse_model_reply(text: &str) -> Result<(String, Vec<SkillCall>), SkillError> {
    let body = match (text.find('{'), text.rfind('}')) {
        (Some(start), Some(end)) if start < end => &text[start..=end],
        _ => return Err(SkillError::Malformed("no JSON object found".into())),
    };
    let value: Value = serde_json::from_str(body).map_err(|e| SkillError::Malformed(e.to_string()))?;
    let reply = value
        .get("reply")
        .and_then(Value::as_str)
        .ok_or_else(|| SkillError::Malformed("`reply` must be a string".into()))?
        .to_string();
    let items = value
        .get("skills")
        .and_then(Value::as_array)
        .ok_or_else(|| SkillError::Malformed("`skills` must be an array".into()))?;
    let mut skills = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let name = item
            .get("skill")
            .and_then(Value::as_str)
            .ok_or_else(|| SkillError::BadArgs {
                index,
                message: "missing `skill` name".into(),
            })?;
        name.parse::<SkillName>()?;
        let skill = serde_json::from_value(item.clone()).map_err(|e| SkillError::BadArgs {
            index,
            message: e.to_string(),
        })?;
        skills.push(skill);
    }
    Ok((reply, skills))
}

/// The library as shown to a language model.
pub fn library_description() -> &'static str {
    r#"Skills (JSON, one object per call):
- {"skill":"go_to","args":{"target":"chest"|"crafting_table"|"plan"|"human"|{"tower":"wood"|"stone"|"brick"}}}
- {"skill":"mine","args":{"material":"wood"|"stone"|"brick","count":N}}
- {"skill":"craft","args":{"item":"pickaxe"}}
- {"skill":"chest_deposit","args":{"material":M,"count":N}}
- {"skill":"chest_withdraw","args":{"material":M,"count":N}}
- {"skill":"place","args":{"cell":{"x":X,"y":Y},"material":M}}
- {"skill":"say","args":{"text":"..."}}
Answer with one JSON object: {"reply":"<what you tell the human>","skills":[...]}.
Use an empty skills list when the message is not a request."#
}
