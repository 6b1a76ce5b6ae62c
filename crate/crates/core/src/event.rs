//! Canonical interaction record shared by every stage of the pipeline.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of feature channels carried by each event.
pub const FEATURE_DIM: usize = 5;

/// Feature channel indices, in vector order.
pub mod channel_index {
    pub const ATTEMPTS: usize = 0;
    pub const EXEC_TIME_MS: usize = 1;
    pub const MEMORY_KB: usize = 2;
    pub const DIFFICULTY: usize = 3;
    pub const GAP_SECONDS: usize = 4;
}

/// Source category of a learning signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Graded submissions, quizzes and exercises.
    #[default]
    Submission,
    /// Attendance, forum activity, resource access.
    Participation,
    /// Questions to assistants and feedback surveys.
    Query,
}

/// One timestamped interaction `(t, z, y)` of a single student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEvent {
    pub student_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub item_id: String,
    pub skill_ids: Vec<String>,
    pub correct: bool,
    /// Attempts, execution time, memory, difficulty, gap since previous event.
    pub features: Vec<f64>,
    /// Which entries of `features` were observed; missing ones hold 0.
    pub present: Vec<bool>,
    pub channel: Channel,
}

impl SignalEvent {
    pub fn validate(&self) -> Result<()> {
        if self.timestamp == 0 {
            return Err(Error::InvalidEvent(format!(
                "timestamp must be positive (student `{}`)",
                self.student_id
            )));
        }
        if let Some(v) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidEvent(format!("non-finite feature value {v}")));
        }
        if self.present.len() != self.features.len() {
            return Err(Error::Shape {
                expected: self.features.len(),
                actual: self.present.len(),
            });
        }
        if self.channel == Channel::Submission && self.skill_ids.is_empty() {
            return Err(Error::InvalidEvent(format!(
                "submission for item `{}` has no skill tags",
                self.item_id
            )));
        }
        Ok(())
    }

    pub fn outcome(&self) -> u8 {
        self.correct as u8
    }
}

/// Groups events by student, preserving each student's original order.
/// Students come out sorted by id.
pub fn group_by_student(events: &[SignalEvent]) -> alloc::collections::BTreeMap<&str, Vec<&SignalEvent>> {
    let mut out: alloc::collections::BTreeMap<&str, Vec<&SignalEvent>> = Default::default();
    for ev in events {
        out.entry(ev.student_id.as_str()).or_default().push(ev);
    }
    out
}

/// Sets the gap channel of every event to the seconds elapsed since the
/// same student's previous event (0 for a student's first event). Events of
/// each student must already be in timestamp order.
pub fn fill_gaps(events: &mut [SignalEvent]) {
    let mut last: alloc::collections::BTreeMap<String, u64> = Default::default();
    for ev in events.iter_mut() {
        let gap = match last.get(&ev.student_id) {
            Some(&prev) => ev.timestamp.saturating_sub(prev) as f64 / 1000.0,
            None => 0.0,
        };
        last.insert(ev.student_id.clone(), ev.timestamp);
        if ev.features.len() < FEATURE_DIM {
            ev.features.resize(FEATURE_DIM, 0.0);
            ev.present.resize(FEATURE_DIM, false);
        }
        ev.features[channel_index::GAP_SECONDS] = gap;
        ev.present[channel_index::GAP_SECONDS] = true;
    }
}
