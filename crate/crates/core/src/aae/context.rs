use std::fmt::Write as _;

use crate::dt_agent::{DecisionTreePolicy, MaterialRef, Node, Predicate, Skill};
use crate::mission_log::MissionTimeline;
use crate::world::AgentKind;

/// What drove the AI teammate, for the context document.
#[derive(Clone, Copy, Debug)]
pub enum AiProfile<'a> {
    DecisionTree(&'a DecisionTreePolicy),
    /// Followed natural-language commands from the human.
    Command,
    /// Joined and did nothing.
    Idle,
    /// Ran as a separate process against the live server.
    Connected,
}

/// Background the explanation model needs about one mission.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MissionContextDoc(String);

impl MissionContextDoc {
    /// Wraps operator-written text; blank text is refused.
    pub fn from_text(text: impl Into<String>) -> Option<Self> {
        let text = text.into();
        (!text.trim().is_empty()).then_some(Self(text))
    }

    pub fn text(&self) -> &str {
        &self.0
    }

    pub fn generate(timeline: &MissionTimeline, ai: AiProfile<'_>) -> Self {
        let h = &timeline.header;
        let c = &h.config;
        let mut s = String::new();
        let _ = writeln!(s, "# Mission {}\n", h.mission_id);
        s.push_str("## Purpose\n\n");
        let _ = writeln!(
            s,
            "A human and an AI teammate build a {}-block house in a {}x{} grid world within {} s. \
             The house goes up layer by layer:",
            c.plan.len(),
            c.width,
            c.height,
            c.time_limit_s
        );
        for (i, layer) in c.plan.layers.iter().enumerate() {
            let _ = writeln!(s, "- layer {}: {} blocks of {}", i + 1, layer.cells.len(), layer.material);
        }
        let _ = writeln!(
            s,
            "\nMaterial comes from towers (wood, stone, brick). A shared chest at {} holds materials \
             for either teammate. A pickaxe, crafted at the table at {} from {} wood, speeds up \
             mining {}x. The mission succeeds when every plan cell is filled before the time limit.\n",
            c.chest, c.crafting_table, c.pickaxe_wood_cost, c.mining.pickaxe_speedup
        );

        s.push_str("## Phases\n\n");
        let t = c.phase_thresholds;
        let _ = writeln!(
            s,
            "The phase follows completion (placed blocks over plan blocks): phase 1 below {:.0}%, \
             phase 2 from {:.0}%, phase 3 from {:.0}%, phase 4 from {:.0}%, phase 5 from {:.0}%. \
             It never goes down.\n",
            t[0] * 100.0,
            t[0] * 100.0,
            t[1] * 100.0,
            t[2] * 100.0,
            t[3] * 100.0
        );

        s.push_str("## Team\n\n");
        for r in &h.roster {
            let kind = match r.kind {
                AgentKind::Human => "human",
                AgentKind::Ai => "AI",
            };
            let _ = writeln!(
                s,
                "- `{}`: {kind}, {}",
                r.id,
                if r.can_place { "can place blocks" } else { "cannot place blocks" }
            );
        }
        s.push_str("\n## Capabilities\n\n");
        s.push_str(
            "Every agent can walk, mine towers, craft a pickaxe, and deposit to or withdraw from \
             the chest. Only agents marked above as able to place blocks can build.\n\n",
        );

        s.push_str("## How the AI decides\n\n");
        match ai {
            AiProfile::DecisionTree(policy) => describe_policy(&mut s, policy),
            AiProfile::Command => s.push_str(
                "The AI follows chat commands from the human. Each command is turned into a short \
                 list of skills (go_to, mine, craft, chest_deposit, chest_withdraw, place, say); \
                 its reply appears in the chat.\n",
            ),
            AiProfile::Idle => s.push_str("The AI joined the mission but took no actions.\n"),
            AiProfile::Connected => s.push_str(
                "The AI ran as its own process connected to the game server. Decision traces it \
                 sent, if any, appear in the timeline and name the branch it took; chat lines show \
                 what it was asked and what it answered.\n",
            ),
        }

        s.push_str("\n## Answering questions\n\n");
        s.push_str(
            "- Ground every answer in the timeline events; do not invent events.\n\
             - Cite the times you rely on in seconds, for example \"at t=42.5 s\".\n\
             - The viewer's playhead is given with each question; \"now\" means the playhead.\n\
             - Decision traces name the phase, the branch taken and the chosen node; use them to \
             explain why the AI acted.\n\
             - If the data cannot answer the question, say so.\n",
        );
        Self(s)
    }
}

fn describe_policy(s: &mut String, policy: &DecisionTreePolicy) {
    let _ = writeln!(s, "The AI runs the decision-tree policy `{}`.", policy.name);
    if !policy.description.is_empty() {
        let _ = writeln!(s, "{}", policy.description.trim());
    }
    s.push_str(
        "Each decision walks the tree for the current phase from its root; every node tests one \
         condition and the leaf reached names a skill. Traces in the timeline record this walk.\n",
    );
    for tree in &policy.phases {
        let _ = writeln!(s, "\nPhase {} (root `{}`):", tree.phase, tree.root);
        for node in &tree.nodes {
            let _ = writeln!(s, "- {}", describe_node(node));
        }
    }
}

fn describe_node(node: &Node) -> String {
    if let Some(skill) = &node.skill {
        return format!("`{}`: {}", node.name, describe_skill(skill));
    }
    let test = node.predicate.as_ref().map_or_else(|| "always".to_string(), describe_predicate);
    format!(
        "`{}`: if {test} go to `{}`, else `{}`",
        node.name,
        node.if_true.as_deref().unwrap_or("-"),
        node.if_false.as_deref().unwrap_or("-")
    )
}

fn describe_predicate(p: &Predicate) -> String {
    match p {
        Predicate::MissionComplete => "the house is complete".into(),
        Predicate::HasPickaxe => "the AI has a pickaxe".into(),
        Predicate::CarryingAtLeast { material, count } => format!("carrying at least {count} of {}", mref(material)),
        Predicate::CarryingTotalAtLeast { count } => format!("carrying at least {count} units"),
        Predicate::HumanGathering { material } => format!("the human is gathering {}", mref(material)),
        Predicate::HumanActivity { activity } => format!("the human is {activity}"),
        Predicate::ChestBelow { material, count } => format!("the chest has fewer than {count} of {}", mref(material)),
        Predicate::StillNeeded { material } => format!("more of {} is still needed", mref(material)),
        Predicate::Near { landmark, radius } => format!("within {radius} cells of {landmark:?}"),
    }
}

fn describe_skill(skill: &Skill) -> String {
    match skill {
        Skill::Gather { material, batch } => format!("gather {} in batches of {batch}", mref(material)),
        Skill::CraftPickaxe => "craft a pickaxe".into(),
        Skill::Deposit { material: Some(m) } => format!("deposit {} in the chest", mref(m)),
        Skill::Deposit { material: None } => "deposit everything in the chest".into(),
        Skill::Navigate { to } => format!("walk to {to:?}"),
        Skill::Idle { seconds } => format!("wait {seconds} s"),
    }
}

fn mref(m: &MaterialRef) -> String {
    match m {
        MaterialRef::Literal(m) => m.to_string(),
        MaterialRef::CurrentLayer => "the current layer's material".into(),
        MaterialRef::NextLayer => "the next layer's material".into(),
        MaterialRef::Complement => "a needed material the human is not gathering".into(),
    }
}
