use serde::Serialize;

use super::MissionContextDoc;
use crate::llm::{format_seconds, ChatMessage, Prompt, Role, PLAYHEAD_PREFIX};
use crate::mission_log::{MissionTimeline, TimelineEvent, TimelineHeader};
use crate::replay::{extract_markers, MarkerKind};
use crate::world::MissionOutcome;

/// Default prompt budget in estimated tokens. A full 90 s desk-scale
/// timeline is about 35k.
pub const DEFAULT_TOKEN_BUDGET: usize = 100_000;

/// Half-width of the window kept around the playhead when truncating.
pub const WINDOW_S: f64 = 60.0;

/// Rough token count: four characters per token.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

/// The five prompt parts, in the order they are sent.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBundle {
    /// Context document plus answering instructions.
    pub system: String,
    /// Timeline data, possibly truncated.
    pub data: String,
    pub history: Vec<ChatMessage>,
    /// `viewer is currently at t=X s`.
    pub playhead: String,
    pub query: String,
    /// Events left out of `data`.
    pub elided: usize,
}

#[derive(Serialize)]
struct DataView<'a> {
    header: &'a TimelineHeader,
    events: Vec<&'a TimelineEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    footer: Option<&'a MissionOutcome>,
}

fn data_block(timeline: &MissionTimeline, keep: &[bool]) -> String {
    let view = DataView {
        header: &timeline.header,
        events: timeline
            .events
            .iter()
            .zip(keep)
            .filter(|&(_, &k)| k)
            .map(|(e, _)| e)
            .collect(),
        footer: timeline.footer.as_ref(),
    };
    let json = serde_json::to_string(&view).expect("timelines serialize");
    format!("Mission timeline:\n```json\n{json}\n```")
}

impl PromptBundle {
    pub fn build(
        context: &MissionContextDoc,
        timeline: &MissionTimeline,
        history: &[ChatMessage],
        playhead_s: f64,
        query: &str,
        budget_tokens: usize,
    ) -> Self {
        let system = format!(
            "{}\n\nYou explain a finished human-AI mission to a viewer scrubbing its replay. \
             Answer from the timeline below and cite times in seconds.",
            context.text().trim_end()
        );
        let playhead = format!("{PLAYHEAD_PREFIX}{} s", format_seconds(playhead_s));
        let fixed: usize = estimate_tokens(&system)
            + history.iter().map(|m| estimate_tokens(&m.content)).sum::<usize>()
            + estimate_tokens(&playhead)
            + estimate_tokens(query);
        let room = budget_tokens.saturating_sub(fixed);

        let n = timeline.events.len();
        let mut keep = vec![true; n];
        let mut data = data_block(timeline, &keep);
        let mut elided = 0;
        if estimate_tokens(&data) > room {
            let phase_events: Vec<bool> = phase_change_events(timeline);
            // Narrow the window until the data fits; phase changes always stay.
            let mut window = WINDOW_S;
            loop {
                for (i, e) in timeline.events.iter().enumerate() {
                    keep[i] = phase_events[i] || (e.timestamp - playhead_s).abs() <= window;
                }
                elided = keep.iter().filter(|k| !**k).count();
                let notice = format!(
                    "Note: {elided} of {n} events were left out to fit the prompt. Kept: events within \
                     {} s of the playhead, and every phase change.\n",
                    format_seconds(window)
                );
                data = format!("{notice}{}", data_block(timeline, &keep));
                if estimate_tokens(&data) <= room || window < 0.5 {
                    break;
                }
                window /= 2.0;
            }
        }
        Self {
            system,
            data,
            history: history.to_vec(),
            playhead,
            query: query.to_string(),
            elided,
        }
    }

    pub fn is_truncated(&self) -> bool {
        self.elided > 0
    }

    pub fn estimated_tokens(&self) -> usize {
        estimate_tokens(&self.system)
            + estimate_tokens(&self.data)
            + self.history.iter().map(|m| estimate_tokens(&m.content)).sum::<usize>()
            + estimate_tokens(&self.playhead)
            + estimate_tokens(&self.query)
    }

    /// System and data as system messages, then the history, then one user
    /// message holding the playhead line and the query.
    pub fn to_prompt(&self) -> Prompt {
        let mut p = Prompt::default();
        p.push(Role::System, &self.system);
        p.push(Role::System, &self.data);
        p.messages.extend(self.history.iter().cloned());
        p.push(Role::User, format!("{}\n\n{}", self.playhead, self.query));
        p
    }
}

/// Events that change the world phase or carry a phase-changing trace.
fn phase_change_events(timeline: &MissionTimeline) -> Vec<bool> {
    let mut out: Vec<bool> = timeline
        .events
        .iter()
        .map(|e| e.action.world.as_ref().is_some_and(|w| w.phase.is_some()))
        .collect();
    for m in extract_markers(timeline, &[MarkerKind::PhaseChange]) {
        out[m.event] = true;
    }
    out
}
