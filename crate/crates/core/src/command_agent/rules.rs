//! Keyword grammar for commands such as "get 5 wood and put it in the
//! chest". Used when no language model is configured or the model keeps
//! producing invalid skills.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;

use super::skill::{Limits, SkillCall, SkillName};
use crate::protocol::Craftable;
use crate::skills::Landmark;
use crate::world::{Cell, Material};

/// What the parser knows about the agent's situation.
#[derive(Clone, Debug)]
pub struct RuleInput<'a> {
    pub limits: Limits<'a>,
    pub inventory: BTreeMap<Material, u32>,
    pub chest: BTreeMap<Material, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Parsed {
    pub reply: String,
    pub skills: Vec<SkillCall>,
}

impl Parsed {
    fn talk(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
            skills: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Verb {
    Gather,
    Bring,
    Deposit,
    Withdraw,
    Craft,
    Go,
    Place,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Amount {
    Default,
    Exactly(u32),
    All,
}

#[derive(Clone, Debug, Default)]
struct Clause {
    verb: Option<Verb>,
    material: Option<Material>,
    amount: Option<Amount>,
    pronoun: bool,
    chest: bool,
    table: bool,
    house: bool,
    me: bool,
    pickaxe: bool,
    cell: Option<Cell>,
}

/// Deterministic command grammar.
#[derive(Clone, Debug)]
pub struct RuleParser {
    /// Units to gather when a command names none.
    pub default_count: u32,
}

impl Default for RuleParser {
    fn default() -> Self {
        Self { default_count: 5 }
    }
}

pub const CLARIFY: &str = "Sorry, I didn't understand that. Try something like \"get 5 wood and put it in the chest\".";

static COORDS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(?\s*(-?\d+)\s*,\s*(-?\d+)\s*\)?").expect("valid regex"));
static SPLIT: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\s*(?:[,;.!]|\band then\b|\bthen\b|\band\b|\bafter that\b)\s*").expect("valid regex")
});

const FILLER: &[&str] = &[
    "please", "can", "could", "would", "will", "you", "kindly", "now", "also", "first", "next",
    "finally", "just", "pls", "ai", "hey", "ok", "okay", "go", "and",
];

const GREETINGS: &[&str] = &["hi", "hello", "hey", "thanks", "thank", "cheers", "morning", "yo"];

impl RuleParser {
    pub fn parse(&self, text: &str, input: &RuleInput<'_>) -> Parsed {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Parsed::talk(CLARIFY);
        }
        if let Some(said) = say_text(trimmed) {
            return self.finish(
                vec![SkillCall::Say {
                    text: said.to_string(),
                }],
                input,
            );
        }
        let lower = trimmed.to_lowercase();
        let mut cells = Vec::new();
        let marked = COORDS.replace_all(&lower, |c: &regex::Captures<'_>| {
            let cell = Cell::new(c[1].parse().unwrap_or(i32::MIN), c[2].parse().unwrap_or(i32::MIN));
            cells.push(cell);
            format!(" cell{} ", cells.len() - 1)
        });
        let clauses: Vec<Clause> = SPLIT
            .split(&marked)
            .map(|part| read_clause(part, &cells))
            .filter(|c| c.verb.is_some() || c.material.is_some() || c.pronoun || c.cell.is_some())
            .collect();

        if clauses.iter().all(|c| c.verb.is_none()) {
            return Parsed::talk(conversational_reply(&lower));
        }
        let mut plan = Planner {
            parser: self,
            input,
            carried: input.inventory.clone(),
            last: None,
            skills: Vec::new(),
        };
        let mut verb = None;
        for mut clause in clauses {
            // "get 5 stone and 3 brick": the second clause borrows the verb.
            if clause.verb.is_none() {
                clause.verb = verb;
            }
            verb = clause.verb;
            if verb.is_none() {
                return Parsed::talk(CLARIFY);
            }
            if let Err(question) = plan.add(&clause) {
                return Parsed::talk(question);
            }
        }
        let skills = plan.skills;
        self.finish(skills, input)
    }

    fn finish(&self, skills: Vec<SkillCall>, input: &RuleInput<'_>) -> Parsed {
        if let Some(s) = skills.iter().find(|s| !input.limits.allows(s.name())) {
            let what = match s.name() {
                SkillName::Place => "place blocks".to_string(),
                other => format!("use {other}"),
            };
            return Parsed::talk(format!("I'm not allowed to {what} in this mission."));
        }
        if let Some(err) = skills
            .iter()
            .find_map(|s| super::skill::validate(s, &input.limits).err())
        {
            return Parsed::talk(format!("I can't do that: {err}."));
        }
        let listed: Vec<String> = skills.iter().map(ToString::to_string).collect();
        Parsed {
            reply: format!("On it: {}.", listed.join(", ")),
            skills,
        }
    }
}

struct Planner<'p, 'a> {
    parser: &'p RuleParser,
    input: &'p RuleInput<'a>,
    /// Inventory as it will be after the skills planned so far.
    carried: BTreeMap<Material, u32>,
    last: Option<(Material, u32)>,
    skills: Vec<SkillCall>,
}

impl Planner<'_, '_> {
    fn material(&self, clause: &Clause) -> Option<Material> {
        clause
            .material
            .or_else(|| clause.pronoun.then(|| self.last.map(|l| l.0)).flatten())
    }

    fn count(&self, clause: &Clause, all: u32) -> u32 {
        match clause.amount {
            Some(Amount::Exactly(n)) => n,
            Some(Amount::All) => all,
            Some(Amount::Default) | None if clause.pronoun => self.last.map_or(all, |l| l.1),
            Some(Amount::Default) | None => self.parser.default_count,
        }
    }

    fn held(&self, m: Material) -> u32 {
        self.carried.get(&m).copied().unwrap_or(0)
    }

    fn adjust(&mut self, m: Material, delta: i64) {
        let now = (self.held(m) as i64 + delta).max(0) as u32;
        self.carried.insert(m, now);
    }

    fn add(&mut self, clause: &Clause) -> Result<(), String> {
        let capacity = self.input.limits.mission.inventory_capacity;
        match clause.verb.expect("verb resolved") {
            Verb::Gather | Verb::Bring if clause.chest && clause.verb == Some(Verb::Gather) => {
                self.withdraw(clause)
            }
            verb @ (Verb::Gather | Verb::Bring) => {
                let m = self
                    .material(clause)
                    .ok_or("Which material should I get: wood, stone or brick?")?;
                let room = capacity.saturating_sub(self.carried.values().sum());
                let n = self.count(clause, room).min(capacity);
                self.skills.push(SkillCall::GoTo {
                    target: Landmark::Tower(m),
                });
                self.skills.push(SkillCall::Mine { material: m, count: n });
                self.adjust(m, n as i64);
                self.last = Some((m, n));
                if verb == Verb::Bring {
                    if clause.chest {
                        self.skills.push(SkillCall::GoTo {
                            target: Landmark::Chest,
                        });
                        self.skills.push(SkillCall::ChestDeposit { material: m, count: n });
                        self.adjust(m, -(n as i64));
                    } else {
                        self.skills.push(SkillCall::GoTo {
                            target: Landmark::Human,
                        });
                    }
                }
                Ok(())
            }
            Verb::Deposit => {
                let material = self.material(clause);
                let everything = material.is_none() && !clause.pronoun;
                let deposits: Vec<(Material, u32)> = match material {
                    Some(m) => {
                        let n = self.count(clause, self.held(m));
                        vec![(m, n)]
                    }
                    None if everything => self
                        .carried
                        .iter()
                        .filter(|&(_, &n)| n > 0)
                        .map(|(&m, &n)| (m, n))
                        .collect(),
                    None => return Err("What should I put in the chest?".into()),
                };
                if deposits.is_empty() {
                    return Err("I'm not carrying anything to put in the chest.".into());
                }
                self.skills.push(SkillCall::GoTo {
                    target: Landmark::Chest,
                });
                for (m, n) in deposits {
                    if n == 0 {
                        return Err(format!("I won't be carrying any {m}."));
                    }
                    self.skills.push(SkillCall::ChestDeposit { material: m, count: n });
                    self.adjust(m, -(n as i64));
                    self.last = Some((m, n));
                }
                Ok(())
            }
            Verb::Withdraw => self.withdraw(clause),
            Verb::Craft => {
                if !clause.pickaxe {
                    return Err("I can only craft a pickaxe. Should I make one?".into());
                }
                self.skills.push(SkillCall::GoTo {
                    target: Landmark::CraftingTable,
                });
                self.skills.push(SkillCall::Craft {
                    item: Craftable::Pickaxe,
                });
                Ok(())
            }
            Verb::Go => {
                let target = if clause.me {
                    Landmark::Human
                } else if clause.chest {
                    Landmark::Chest
                } else if clause.table {
                    Landmark::CraftingTable
                } else if clause.house {
                    Landmark::Plan
                } else if let Some(m) = clause.material {
                    Landmark::Tower(m)
                } else {
                    return Err("Where should I go: the chest, the table, a tower, the house or to you?".into());
                };
                self.skills.push(SkillCall::GoTo { target });
                Ok(())
            }
            Verb::Place => {
                let cell = clause.cell.ok_or("Which cell should I place it in? Give me x,y.")?;
                let required = self.input.limits.mission.plan.required(cell);
                let m = self
                    .material(clause)
                    .or(required)
                    .ok_or("That cell is not part of the house.")?;
                self.skills.push(SkillCall::Place { cell, material: m });
                self.adjust(m, -1);
                Ok(())
            }
        }
    }

    fn withdraw(&mut self, clause: &Clause) -> Result<(), String> {
        let m = self
            .material(clause)
            .ok_or("Which material should I take from the chest?")?;
        let stocked = self.input.chest.get(&m).copied().unwrap_or(0);
        let n = self.count(clause, stocked);
        if n == 0 {
            return Err(format!("The chest has no {m}."));
        }
        self.skills.push(SkillCall::GoTo {
            target: Landmark::Chest,
        });
        self.skills.push(SkillCall::ChestWithdraw { material: m, count: n });
        self.adjust(m, n as i64);
        self.last = Some((m, n));
        Ok(())
    }
}

/// Text of a "say ..." command, original casing kept.
fn say_text(text: &str) -> Option<&str> {
    let lower = text.to_ascii_lowercase();
    let mut offset = 0;
    for word in lower.split_whitespace() {
        let start = lower[offset..].find(word).map(|i| i + offset)?;
        offset = start + word.len();
        let bare = word.trim_matches(|c: char| !c.is_alphanumeric());
        if FILLER.contains(&bare) {
            continue;
        }
        if bare == "say" {
            let rest = text[offset..].trim().trim_start_matches(':').trim();
            let rest = rest.trim_matches('"');
            return (!rest.is_empty()).then_some(rest);
        }
        return None;
    }
    None
}

fn word_number(w: &str) -> Option<u32> {
    const WORDS: [&str; 21] = [
        "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
        "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
        "nineteen", "twenty",
    ];
    w.parse()
        .ok()
        .or_else(|| WORDS.iter().position(|&x| x == w).map(|i| i as u32))
        .or(match w {
            "a" | "an" | "single" => Some(1),
            "couple" | "pair" => Some(2),
            "few" => Some(3),
            "dozen" => Some(12),
            _ => None,
        })
}

fn material_word(w: &str) -> Option<Material> {
    match w {
        "rock" | "rocks" | "stones" => Some(Material::Stone),
        "timber" | "tree" | "trees" => Some(Material::Wood),
        "clay" => Some(Material::Brick),
        _ => w.parse().ok(),
    }
}

fn verb_word(w: &str) -> Option<Verb> {
    Some(match w {
        "get" | "gather" | "mine" | "collect" | "chop" | "fetch" | "harvest" | "dig" => Verb::Gather,
        "bring" => Verb::Bring,
        "put" | "deposit" | "store" | "stash" | "drop" | "stock" | "leave" | "unload" => Verb::Deposit,
        "withdraw" | "take" | "grab" | "retrieve" => Verb::Withdraw,
        "craft" | "make" => Verb::Craft,
        "come" | "move" | "walk" | "head" | "return" | "meet" | "follow" | "goto" => Verb::Go,
        "place" | "build" | "set" => Verb::Place,
        _ => return None,
    })
}

fn read_clause(part: &str, cells: &[Cell]) -> Clause {
    let mut clause = Clause::default();
    let words: Vec<&str> = part
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let mut lead = true;
    let mut went = false;
    for (i, &w) in words.iter().enumerate() {
        if lead && FILLER.contains(&w) {
            went |= w == "go";
            continue;
        }
        if lead {
            lead = false;
            clause.verb = verb_word(w);
            if clause.verb.is_none() && went {
                clause.verb = Some(Verb::Go);
            }
            if clause.verb.is_some() {
                continue;
            }
        }
        if let Some(idx) = w.strip_prefix("cell").and_then(|n| n.parse::<usize>().ok()) {
            clause.cell = cells.get(idx).copied();
            continue;
        }
        match w {
            "it" | "them" | "that" | "those" | "this" => clause.pronoun = true,
            "all" | "everything" | "whole" => clause.amount = Some(Amount::All),
            "chest" | "box" | "storage" => clause.chest = true,
            "table" | "bench" | "workbench" => clause.table = true,
            "house" | "plan" | "site" | "building" => clause.house = true,
            "me" | "here" => clause.me = true,
            "pickaxe" | "pick" => clause.pickaxe = true,
            _ => {
                if let Some(m) = material_word(w) {
                    clause.material = Some(m);
                } else if let Some(n) = word_number(w) {
                    // "a pickaxe" and "an" carry no quantity; "a few" keeps the later word.
                    let next_is_noun = words.get(i + 1).is_some_and(|n| word_number(n).is_none());
                    if clause.amount.is_none() || next_is_noun {
                        clause.amount = Some(Amount::Exactly(n));
                    }
                }
            }
        }
    }
    if clause.amount == Some(Amount::Exactly(0)) {
        clause.amount = Some(Amount::Default);
    }
    clause
}

fn conversational_reply(lower: &str) -> String {
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    if words.iter().any(|w| GREETINGS.contains(w)) || lower.contains("how are you") {
        return "I'm here and ready. Tell me what to gather, craft or bring to the chest.".into();
    }
    if lower.trim_end().ends_with('?') {
        return "I can gather wood, stone or brick, use the chest, craft a pickaxe and move around. \
                What should I do?"
            .into();
    }
    CLARIFY.into()
}
