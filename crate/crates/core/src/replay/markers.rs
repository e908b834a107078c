use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mission_log::MissionTimeline;
use crate::world::Block;

/// Chat lines starting with this are operator annotations, shown as
/// `custom` markers rather than `chat`.
pub const CUSTOM_PREFIX: &str = "!mark";

/// Marker kinds, highest priority first: an event that qualifies for
/// several requested kinds yields one marker of the first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerKind {
    PhaseChange,
    DecisionPoint,
    BlockPlaced,
    Chat,
    Custom,
}

impl MarkerKind {
    pub const ALL: [MarkerKind; 5] = [
        MarkerKind::PhaseChange,
        MarkerKind::DecisionPoint,
        MarkerKind::BlockPlaced,
        MarkerKind::Chat,
        MarkerKind::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MarkerKind::PhaseChange => "phase_change",
            MarkerKind::DecisionPoint => "decision_point",
            MarkerKind::BlockPlaced => "block_placed",
            MarkerKind::Chat => "chat",
            MarkerKind::Custom => "custom",
        }
    }
}

impl fmt::Display for MarkerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarkerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MarkerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| format!("unknown marker kind `{}`", s.trim()))
    }
}

/// Comma-separated kinds; empty means all.
pub fn parse_kinds(list: &str) -> Result<Vec<MarkerKind>, String> {
    if list.trim().is_empty() {
        return Ok(MarkerKind::ALL.to_vec());
    }
    list.split(',').map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub t: f64,
    pub kind: MarkerKind,
    pub label: String,
    /// Index of the event the marker points at.
    pub event: usize,
}

/// One marker per qualifying event, in time order.
///
/// A decision point is a trace whose selected node differs from the
/// previous trace's (the first trace counts); a phase change is a trace
/// whose phase differs from the previous trace's.
pub fn extract_markers(timeline: &MissionTimeline, kinds: &[MarkerKind]) -> Vec<Marker> {
    let mut out = Vec::new();
    let mut last_node: Option<&str> = None;
    let mut last_phase: Option<u8> = None;
    for (index, event) in timeline.events.iter().enumerate() {
        let mut found: Vec<(MarkerKind, String)> = Vec::new();
        for trace in &event.action.decision_traces {
            if last_phase.is_some_and(|p| p != trace.phase) {
                found.push((
                    MarkerKind::PhaseChange,
                    format!("{} entered phase {}", trace.agent, trace.phase),
                ));
            }
            if last_node != Some(trace.selected_node.as_str()) {
                found.push((
                    MarkerKind::DecisionPoint,
                    format!("{} chose {}", trace.agent, trace.selected_node),
                ));
            }
            last_phase = Some(trace.phase);
            last_node = Some(trace.selected_node.as_str());
        }
        if let Some(world) = &event.action.world {
            for change in &world.blocks {
                if let Block::Placed { material, by } = &change.block {
                    found.push((
                        MarkerKind::BlockPlaced,
                        format!("{by} placed {material} at {}", change.cell),
                    ));
                }
            }
        }
        for line in &event.action.chat {
            match line.text.strip_prefix(CUSTOM_PREFIX) {
                Some(note) => found.push((MarkerKind::Custom, note.trim().to_string())),
                None => found.push((MarkerKind::Chat, format!("{}: {}", line.from, line.text))),
            }
        }
        let best = found
            .into_iter()
            .filter(|(k, _)| kinds.contains(k))
            .min_by_key(|(k, _)| *k);
        if let Some((kind, label)) = best {
            out.push(Marker {
                t: event.timestamp,
                kind,
                label,
                event: index,
            });
        }
    }
    out
}
