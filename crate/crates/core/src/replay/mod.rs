//! Deterministic replay of a mission timeline: world snapshots at any time,
//! navigation markers, and rendered frames.

mod markers;
mod render;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use markers::{extract_markers, parse_kinds, Marker, MarkerKind, CUSTOM_PREFIX};
pub use render::{encode_png, render_frame, render_png, Viewpoint, CELL_PX, EGO_RADIUS};

use crate::mission_log::{apply_event, parse_timeline, MissionTimeline, TimelineError};
use crate::world::{AgentId, Position, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReplayError {
    #[error("{0}")]
    SchemaInvalid(TimelineError),
    #[error("t={t} is outside the mission, which spans 0..={end}")]
    TimeOutOfRange { t: f64, end: f64 },
    #[error("unknown viewpoint `{0}`")]
    UnknownViewpoint(String),
    #[error("world rebuild failed: {0}")]
    World(String),
    #[error("png encoding failed: {0}")]
    Encode(String),
}

/// The world as it stood at `t`, plus smoothed positions for display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub world: WorldState,
    /// Positions interpolated between the logged positions around `t`.
    pub display: BTreeMap<AgentId, Position>,
}

/// Seeks through one timeline, applying events forward from the last seek
/// and rewinding only when asked for an earlier time.
#[derive(Debug)]
pub struct Replayer<'a> {
    timeline: &'a MissionTimeline,
    initial: WorldState,
    world: WorldState,
    /// Events applied so far.
    applied: usize,
    tracks: BTreeMap<AgentId, Vec<(f64, Position)>>,
}

impl<'a> Replayer<'a> {
    pub fn new(timeline: &'a MissionTimeline) -> Result<Self, ReplayError> {
        parse_timeline(&timeline.to_json()).map_err(ReplayError::SchemaInvalid)?;
        let initial = timeline
            .initial_world()
            .map_err(|e| ReplayError::World(e.to_string()))?;
        let mut tracks: BTreeMap<AgentId, Vec<(f64, Position)>> = initial
            .agents
            .values()
            .map(|a| (a.id.clone(), vec![(0.0, a.position)]))
            .collect();
        for event in &timeline.events {
            for (id, delta) in &event.action.agents {
                if let Some(p) = delta.position {
                    tracks.entry(id.clone()).or_default().push((event.timestamp, p));
                }
            }
        }
        Ok(Self {
            timeline,
            world: initial.clone(),
            initial,
            applied: 0,
            tracks,
        })
    }

    pub fn end_time(&self) -> f64 {
        self.timeline.end_time()
    }

    pub fn seek(&mut self, t: f64) -> Result<Snapshot, ReplayError> {
        let end = self.end_time();
        if !(0.0..=end).contains(&t) {
            return Err(ReplayError::TimeOutOfRange { t, end });
        }
        let events = &self.timeline.events;
        if self.applied > 0 && events[self.applied - 1].timestamp > t {
            self.world = self.initial.clone();
            self.applied = 0;
        }
        while let Some(event) = events.get(self.applied).filter(|e| e.timestamp <= t) {
            apply_event(&mut self.world, event);
            self.applied += 1;
        }
        let mut world = self.world.clone();
        let hz = f64::from(world.config.tick_rate_hz);
        world.tick = world.tick.max((t * hz + 1e-6).floor() as u64);
        let display = world
            .agents
            .keys()
            .map(|id| (id.clone(), self.display_position(id, t, &world)))
            .collect();
        Ok(Snapshot { t, world, display })
    }

    fn display_position(&self, id: &AgentId, t: f64, world: &WorldState) -> Position {
        let logged = world.agents[id].position;
        let Some(track) = self.tracks.get(id) else {
            return logged;
        };
        let after = track.partition_point(|&(ts, _)| ts <= t);
        match (after.checked_sub(1).map(|i| track[i]), track.get(after)) {
            (Some((t0, p0)), Some(&(t1, p1))) if t1 > t0 => {
                let f = (t - t0) / (t1 - t0);
                Position::new(p0.x + (p1.x - p0.x) * f, p0.y + (p1.y - p0.y) * f)
            }
            _ => logged,
        }
    }
}

/// The world at `t`, rebuilt from the timeline alone.
pub fn reconstruct(timeline: &MissionTimeline, t: f64) -> Result<Snapshot, ReplayError> {
    Replayer::new(timeline)?.seek(t)
}
