//! Domain types shared across the crate: samples, series, events, windows.
//!
//! Everything here is plain immutable data. Validation reports violations
//! as values rather than failing, so callers can decide what to do with a
//! partially broken recording.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default seconds between consecutive steps.
pub const DEFAULT_CADENCE_SECONDS: u32 = 5;

/// Default hour of day at which one night ends and the next begins.
pub const DEFAULT_NIGHT_BOUNDARY_HOUR: u32 = 12;

pub type Timestamp = DateTime<FixedOffset>;

/// Timestamp layout used by every CSV file in this crate.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Onset,
    Wakeup,
}

impl EventClass {
    pub const ALL: [EventClass; 2] = [EventClass::Onset, EventClass::Wakeup];

    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Onset => "onset",
            EventClass::Wakeup => "wakeup",
        }
    }
}

impl fmt::Display for EventClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "onset" => Ok(EventClass::Onset),
            "wakeup" => Ok(EventClass::Wakeup),
            other => Err(Error::Parse(format!("unknown event class '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub step: u64,
    pub timestamp: Timestamp,
    /// Arm angle relative to the body's vertical axis, degrees.
    pub anglez: f64,
    /// Euclidean norm minus one, in g.
    pub enmo: f64,
}

/// One subject's continuous recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub series_id: String,
    pub samples: Vec<Sample>,
    pub cadence_seconds: u32,
}

impl Series {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn anglez(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.anglez).collect()
    }

    pub fn enmo(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.enmo).collect()
    }

    pub fn steps(&self) -> Vec<u64> {
        self.samples.iter().map(|s| s.step).collect()
    }

    pub fn first_step(&self) -> Option<u64> {
        self.samples.first().map(|s| s.step)
    }

    /// Position of `step` in the sample vector, assuming contiguous steps.
    pub fn index_of_step(&self, step: u64) -> Option<usize> {
        let first = self.first_step()?;
        let idx = usize::try_from(step.checked_sub(first)?).ok()?;
        (idx < self.samples.len()).then_some(idx)
    }

    /// Number of steps spanning `minutes`, at least one.
    pub fn steps_for_minutes(&self, minutes: f64) -> usize {
        steps_for_minutes(minutes, self.cadence_seconds)
    }
}

pub fn steps_for_minutes(minutes: f64, cadence_seconds: u32) -> usize {
    let steps = (minutes * 60.0 / f64::from(cadence_seconds.max(1))).round();
    (steps as usize).max(1)
}

/// Ground-truth event as found in an events file.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEvent {
    pub series_id: String,
    pub night: i64,
    pub class: EventClass,
    pub step: u64,
    pub timestamp: Timestamp,
}

/// A predicted event with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEvent {
    pub series_id: String,
    pub class: EventClass,
    pub step: u64,
    pub confidence: f64,
}

/// A contiguous sleep interval `[onset_step, wakeup_step)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SleepWindow {
    pub series_id: String,
    pub onset_step: u64,
    pub wakeup_step: u64,
    /// Calendar date the night starts on; `None` until assigned.
    pub night: Option<NaiveDate>,
}

impl SleepWindow {
    pub fn new(series_id: impl Into<String>, onset_step: u64, wakeup_step: u64) -> Result<Self> {
        if onset_step >= wakeup_step {
            return Err(Error::Invalid(format!(
                "sleep window onset {onset_step} must precede wakeup {wakeup_step}"
            )));
        }
        Ok(Self {
            series_id: series_id.into(),
            onset_step,
            wakeup_step,
            night: None,
        })
    }

    pub fn len_steps(&self) -> u64 {
        self.wakeup_step.saturating_sub(self.onset_step)
    }

    pub fn overlaps(&self, other: &SleepWindow) -> bool {
        self.series_id == other.series_id
            && self.onset_step < other.wakeup_step
            && other.onset_step < self.wakeup_step
    }
}

/// Span `[start_step, end_step)` of a series inside which predictions count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoringInterval {
    pub series_id: String,
    pub start_step: u64,
    pub end_step: u64,
}

impl ScoringInterval {
    pub fn contains(&self, step: u64) -> bool {
        self.start_step <= step && step < self.end_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    Empty,
    ZeroCadence,
    StepGap,
    TimestampDrift,
    AnglezRange,
    NegativeEnmo,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// Sample position the violation refers to.
    pub index: usize,
    pub kind: ViolationKind,
    pub description: String,
}

/// Checks every series invariant and returns the violations found.
pub fn validate_series(series: &Series) -> Vec<Violation> {
    let mut out = Vec::new();
    if series.samples.is_empty() {
        out.push(Violation {
            index: 0,
            kind: ViolationKind::Empty,
            description: "series has no samples".into(),
        });
        return out;
    }
    if series.cadence_seconds == 0 {
        out.push(Violation {
            index: 0,
            kind: ViolationKind::ZeroCadence,
            description: "cadence must be positive".into(),
        });
    }
    let cadence = i64::from(series.cadence_seconds);

    for (i, s) in series.samples.iter().enumerate() {
        if !s.anglez.is_finite() || !s.enmo.is_finite() {
            out.push(Violation {
                index: i,
                kind: ViolationKind::NonFinite,
                description: format!("non-finite value at step {}", s.step),
            });
            continue;
        }
        if !(-90.0..=90.0).contains(&s.anglez) {
            out.push(Violation {
                index: i,
                kind: ViolationKind::AnglezRange,
                description: format!("anglez {} outside [-90, 90] at step {}", s.anglez, s.step),
            });
        }
        if s.enmo < 0.0 {
            out.push(Violation {
                index: i,
                kind: ViolationKind::NegativeEnmo,
                description: format!("negative enmo {} at step {}", s.enmo, s.step),
            });
        }
    }

    for (i, pair) in series.samples.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        if b.step != a.step + 1 {
            out.push(Violation {
                index: i + 1,
                kind: ViolationKind::StepGap,
                description: format!("step gap at index {}: {} -> {}", i + 1, a.step, b.step),
            });
        }
        let dt = (b.timestamp - a.timestamp).num_seconds();
        if cadence > 0 && (dt - cadence).abs() > 1 {
            out.push(Violation {
                index: i + 1,
                kind: ViolationKind::TimestampDrift,
                description: format!(
                    "timestamp delta {dt}s at index {} differs from cadence {cadence}s",
                    i + 1
                ),
            });
        }
    }
    out
}

/// Night key for a timestamp: the local calendar date on which the night
/// containing `timestamp` began, nights running from `boundary_hour` to
/// `boundary_hour` the following day.
pub fn night_of(timestamp: &Timestamp, boundary_hour: u32) -> NaiveDate {
    let hour = i64::from(boundary_hour.min(23));
    (timestamp.naive_local() - Duration::hours(hour)).date()
}

/// Wall duration of a window in seconds.
pub fn window_duration(window: &SleepWindow, cadence_seconds: u32) -> Result<u64> {
    if window.onset_step >= window.wakeup_step {
        return Err(Error::Invalid(format!(
            "degenerate window [{}, {})",
            window.onset_step, window.wakeup_step
        )));
    }
    Ok(window.len_steps() * u64::from(cadence_seconds))
}

pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    DateTime::parse_from_str(s.trim(), TIMESTAMP_FORMAT)
        .map_err(|e| Error::Parse(format!("timestamp '{s}': {e}")))
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}
