//! Timeline parsing and validation.

use std::fmt;
use std::path::Path;

use serde_json::Value;

use super::{MissionTimeline, TimelineEvent, TIMELINE_VERSION};

/// Where a timeline failed to validate.
#[derive(Clone, Debug, PartialEq)]
pub enum TimelineError {
    Io(String),
    Invalid {
        /// JSON path such as `events[3].timestamp`.
        path: String,
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
}

impl TimelineError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        TimelineError::Io(format!("{}: {e}", path.display()))
    }

    fn at(path: impl Into<String>, message: impl Into<String>) -> Self {
        TimelineError::Invalid {
            path: path.into(),
            line: None,
            column: None,
            message: message.into(),
        }
    }

    fn from_serde(path: Option<String>, e: &serde_json::Error) -> Self {
        TimelineError::Invalid {
            path: path.unwrap_or_else(|| "$".into()),
            line: Some(e.line()),
            column: Some(e.column()),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for TimelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimelineError::Io(msg) => write!(f, "io failure: {msg}"),
            TimelineError::Invalid {
                path,
                line: Some(line),
                column: Some(column),
                message,
            } => write!(f, "schema-invalid at {path} (line {line}, column {column}): {message}"),
            TimelineError::Invalid { path, message, .. } => {
                write!(f, "schema-invalid at {path}: {message}")
            }
        }
    }
}

impl std::error::Error for TimelineError {}

/// Parses and validates a full timeline file.
pub fn parse_timeline(bytes: &[u8]) -> Result<MissionTimeline, TimelineError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| TimelineError::from_serde(None, &e))?;
    let root = value
        .as_object()
        .ok_or_else(|| TimelineError::at("$", "root must be an object with header, events and footer"))?;
    let events = root
        .get("events")
        .ok_or_else(|| TimelineError::at("$", "missing `events` array"))?;
    check_events_shape(events, "events")?;

    let timeline: MissionTimeline = serde_json::from_slice(bytes).map_err(|e| {
        TimelineError::from_serde(first_bad_event(events, "events"), &e)
    })?;

    let header = &timeline.header;
    if header.v != TIMELINE_VERSION {
        return Err(TimelineError::at(
            "header.v",
            format!("unsupported version {}, expected {TIMELINE_VERSION}", header.v),
        ));
    }
    if header.config_digest != header.config.digest() {
        return Err(TimelineError::at(
            "header.config_digest",
            "digest does not match the embedded config",
        ));
    }
    header
        .config
        .validate()
        .map_err(|e| TimelineError::at("header.config", e.to_string()))?;
    check_timestamps(&timeline.events, "events", Some(header.config.time_limit_s))?;
    Ok(timeline)
}

/// Parses the bare event-array export.
pub fn parse_bare_events(bytes: &[u8]) -> Result<Vec<TimelineEvent>, TimelineError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| TimelineError::from_serde(None, &e))?;
    check_events_shape(&value, "$")?;
    let events: Vec<TimelineEvent> = serde_json::from_slice(bytes)
        .map_err(|e| TimelineError::from_serde(first_bad_event(&value, "$"), &e))?;
    check_timestamps(&events, "$", None)?;
    Ok(events)
}

/// The two-key rule, checked on raw JSON so extra keys are named.
fn check_events_shape(events: &Value, base: &str) -> Result<(), TimelineError> {
    let array = events
        .as_array()
        .ok_or_else(|| TimelineError::at(base, "events must be an array"))?;
    for (i, event) in array.iter().enumerate() {
        let path = format!("{base}[{i}]");
        let obj = event
            .as_object()
            .ok_or_else(|| TimelineError::at(&path, "event must be an object"))?;
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        if keys != ["action", "timestamp"] {
            return Err(TimelineError::at(
                &path,
                format!("event must have exactly the keys `timestamp` and `action`, found {keys:?}"),
            ));
        }
        if !obj["timestamp"].is_number() {
            return Err(TimelineError::at(format!("{path}.timestamp"), "timestamp must be a number"));
        }
        if !obj["action"].is_object() {
            return Err(TimelineError::at(format!("{path}.action"), "action must be an object"));
        }
    }
    Ok(())
}

/// Index of the first event that does not deserialize on its own.
fn first_bad_event(events: &Value, base: &str) -> Option<String> {
    events.as_array()?.iter().enumerate().find_map(|(i, e)| {
        serde_json::from_value::<TimelineEvent>(e.clone())
            .err()
            .map(|_| format!("{base}[{i}]"))
    })
}

fn check_timestamps(
    events: &[TimelineEvent],
    base: &str,
    limit: Option<f64>,
) -> Result<(), TimelineError> {
    let mut prev = 0.0;
    for (i, e) in events.iter().enumerate() {
        let path = format!("{base}[{i}].timestamp");
        let t = e.timestamp;
        if !t.is_finite() || t < 0.0 {
            return Err(TimelineError::at(path, format!("timestamp {t} must be finite and >= 0")));
        }
        if t < prev {
            return Err(TimelineError::at(
                path,
                format!("timestamp {t} is earlier than the previous event's {prev}"),
            ));
        }
        if let Some(limit) = limit {
            if t > limit + 1e-9 {
                return Err(TimelineError::at(path, format!("timestamp {t} exceeds time limit {limit}")));
            }
        }
        prev = t;
    }
    Ok(())
}
