//! Online-judge submission exports.
//!
//! Expected header (any column order, extra columns ignored):
//! `submission_id, student_id, problem_id, verdict, exec_time_ms, memory_kb,
//! timestamp, attempts, difficulty`, plus an optional `skill_ids` column
//! (`;`-joined). Without it the problem id is the skill.

use std::collections::BTreeMap;
use std::io::Read;

use chrono::DateTime;
use serde::{Deserialize, Serialize};
use tutorflow_core::event::{channel_index, fill_gaps, Channel, SignalEvent, FEATURE_DIM};

use crate::canonical::{sort_events, split_skills};
use crate::error::{AppError, AppResult};
use crate::report::{ErrorSink, IngestReport, RowError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Accepted
    AC,
    /// Wrong answer
    WA,
    /// Runtime error
    RTE,
    /// Compile error
    CE,
    /// Time limit exceeded
    TLE,
    /// Memory limit exceeded
    MLE,
    /// Any other judge status (IR, OLE, IE, AB, SC).
    Other,
}

impl Verdict {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s.trim().to_ascii_uppercase().as_str() {
            "AC" => Self::AC,
            "WA" => Self::WA,
            "RTE" => Self::RTE,
            "CE" => Self::CE,
            "TLE" => Self::TLE,
            "MLE" => Self::MLE,
            "IR" | "OLE" | "IE" | "AB" | "SC" => Self::Other,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OjSubmission {
    pub submission_id: String,
    pub student_id: String,
    pub problem_id: String,
    pub verdict: Verdict,
    pub exec_time_ms: Option<f64>,
    pub memory_kb: Option<f64>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
    /// Attempts up to and including this one; derived when the file leaves
    /// it empty.
    pub attempts: Option<u32>,
    pub difficulty: Option<f64>,
    pub skill_ids: Vec<String>,
}

const REQUIRED: [&str; 9] = [
    "submission_id",
    "student_id",
    "problem_id",
    "verdict",
    "exec_time_ms",
    "memory_kb",
    "timestamp",
    "attempts",
    "difficulty",
];

/// Integer milliseconds or an RFC 3339 date-time.
pub fn parse_timestamp(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Ok(ms) = s.parse::<u64>() {
        return (ms > 0).then_some(ms);
    }
    let ms = DateTime::parse_from_rfc3339(s).ok()?.timestamp_millis();
    u64::try_from(ms).ok().filter(|&ms| ms > 0)
}

/// `easy/medium/hard` map to 1/2/3; numbers pass through.
pub fn parse_difficulty(s: &str) -> Option<f64> {
    match s.trim().to_ascii_lowercase().as_str() {
        "easy" => Some(1.0),
        "medium" => Some(2.0),
        "hard" => Some(3.0),
        other => other.parse::<f64>().ok().filter(|v| v.is_finite()),
    }
}

fn optional_number(s: &str, name: &str) -> Result<Option<f64>, String> {
    if s.trim().is_empty() {
        return Ok(None);
    }
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite() && *v >= 0.0)
        .map(Some)
        .ok_or_else(|| format!("bad {name} `{s}`"))
}

fn parse_submission(get: &dyn Fn(&str) -> String) -> Result<OjSubmission, String> {
    let verdict_raw = get("verdict");
    let verdict = Verdict::parse(&verdict_raw).ok_or_else(|| format!("unknown verdict `{verdict_raw}`"))?;
    let ts_raw = get("timestamp");
    let timestamp = parse_timestamp(&ts_raw).ok_or_else(|| format!("malformed timestamp `{ts_raw}`"))?;
    let attempts_raw = get("attempts");
    let attempts = if attempts_raw.trim().is_empty() {
        None
    } else {
        match attempts_raw.trim().parse::<u32>() {
            Ok(a) if a >= 1 => Some(a),
            _ => return Err(format!("attempts `{attempts_raw}` must be an integer >= 1")),
        }
    };
    let diff_raw = get("difficulty");
    let difficulty = if diff_raw.trim().is_empty() {
        None
    } else {
        Some(parse_difficulty(&diff_raw).ok_or_else(|| format!("bad difficulty `{diff_raw}`"))?)
    };
    let student_id = get("student_id");
    let problem_id = get("problem_id");
    if student_id.is_empty() || problem_id.is_empty() {
        return Err("student_id and problem_id must be non-empty".into());
    }
    let tagged = split_skills(&get("skill_ids"));
    let skill_ids = if tagged.is_empty() { vec![problem_id.clone()] } else { tagged };
    Ok(OjSubmission {
        submission_id: get("submission_id"),
        student_id,
        problem_id,
        verdict,
        exec_time_ms: optional_number(&get("exec_time_ms"), "exec_time_ms")?,
        memory_kb: optional_number(&get("memory_kb"), "memory_kb")?,
        timestamp,
        attempts,
        difficulty,
        skill_ids,
    })
}

/// Parses every row, collecting row errors. Fails once more than
/// `max_errors` rows are bad.
pub fn read_submissions<R: Read>(
    reader: R,
    source: &str,
    max_errors: Option<usize>,
) -> AppResult<(Vec<OjSubmission>, usize, Vec<RowError>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AppError::csv(source, e))?.clone();
    let index: BTreeMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let missing: Vec<&str> = REQUIRED.iter().copied().filter(|c| !index.contains_key(c)).collect();
    if !missing.is_empty() {
        return Err(AppError::Validation(format!(
            "{source}: missing OJ columns {}",
            missing.join(", ")
        )));
    }
    let mut sink = ErrorSink::new(source, max_errors);
    let mut rows = Vec::new();
    let mut rows_in = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::csv(source, e))?;
        rows_in += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |name: &str| {
            index
                .get(name)
                .and_then(|&i| rec.get(i))
                .unwrap_or("")
                .to_string()
        };
        match parse_submission(&get) {
            Ok(s) => rows.push(s),
            Err(m) => sink.push(line, m)?,
        }
    }
    Ok((rows, rows_in, sink.errors))
}

/// Fills missing attempt counts: one plus the number of consecutive
/// non-accepted submissions the same student made on the same problem
/// immediately before. Input must be sorted per student by timestamp.
fn fill_attempts(subs: &mut [OjSubmission]) {
    let mut streak: BTreeMap<(String, String), u32> = BTreeMap::new();
    for s in subs.iter_mut() {
        let key = (s.student_id.clone(), s.problem_id.clone());
        let prior = streak.get(&key).copied().unwrap_or(0);
        if s.attempts.is_none() {
            s.attempts = Some(prior + 1);
        }
        let next = if s.verdict == Verdict::AC { 0 } else { prior + 1 };
        streak.insert(key, next);
    }
}

pub fn to_event(s: &OjSubmission) -> SignalEvent {
    let mut features = vec![0.0; FEATURE_DIM];
    let mut present = vec![false; FEATURE_DIM];
    let mut set = |channel: usize, v: Option<f64>| {
        if let Some(v) = v {
            features[channel] = v;
            present[channel] = true;
        }
    };
    set(channel_index::ATTEMPTS, s.attempts.map(f64::from));
    set(channel_index::EXEC_TIME_MS, s.exec_time_ms);
    set(channel_index::MEMORY_KB, s.memory_kb);
    set(channel_index::DIFFICULTY, s.difficulty);
    SignalEvent {
        student_id: s.student_id.clone(),
        timestamp: s.timestamp,
        item_id: s.problem_id.clone(),
        skill_ids: s.skill_ids.clone(),
        correct: s.verdict == Verdict::AC,
        features,
        present,
        channel: Channel::Submission,
    }
}

/// Parses an OJ export into canonical events sorted per student by time.
pub fn ingest_oj<R: Read>(reader: R, source: &str, max_errors: Option<usize>) -> AppResult<(Vec<SignalEvent>, IngestReport)> {
    let (mut subs, rows_in, errors) = read_submissions(reader, source, max_errors)?;
    subs.sort_by(|a, b| a.student_id.cmp(&b.student_id).then(a.timestamp.cmp(&b.timestamp)));
    fill_attempts(&mut subs);
    let mut events: Vec<SignalEvent> = subs.iter().map(to_event).collect();
    sort_events(&mut events);
    fill_gaps(&mut events);
    let report = IngestReport {
        source: "oj".into(),
        rows_in,
        rows_out: events.len(),
        rows_rejected: errors.len(),
        steps: None,
        errors,
    };
    Ok((events, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEAD: &str = "submission_id,student_id,problem_id,verdict,exec_time_ms,memory_kb,timestamp,attempts,difficulty\n";

    #[test]
    fn verdicts_map_to_correctness() {
        let csv = format!("{HEAD}1,s,p,AC,10,100,1000,1,easy\n2,s,q,WA,12,90,2000,1,hard\n");
        let (events, report) = ingest_oj(csv.as_bytes(), "t", None).unwrap();
        assert!(events[0].correct && !events[1].correct);
        assert_eq!(events[1].features[channel_index::DIFFICULTY], 3.0);
        assert_eq!(events[1].features[channel_index::GAP_SECONDS], 1.0);
        assert_eq!(report.rows_in, 2);
    }

    #[test]
    fn empty_file_gives_no_events() {
        let (events, report) = ingest_oj(HEAD.as_bytes(), "t", None).unwrap();
        assert!(events.is_empty());
        assert_eq!((report.rows_in, report.rows_out), (0, 0));
    }

    #[test]
    fn bad_rows_are_collected_or_abort() {
        let csv = format!("{HEAD}1,s,p,XX,10,100,1000,1,1\n2,s,p,AC,10,100,nope,1,1\n3,s,p,AC,10,100,3000,1,1\n");
        let (events, report) = ingest_oj(csv.as_bytes(), "t", None).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(report.rows_in, report.rows_out + report.rows_rejected);
        assert_eq!(report.errors[0].line, 2);
        assert!(report.errors[0].message.contains("verdict"));
        assert!(report.errors[1].message.contains("timestamp"));
        let err = ingest_oj(csv.as_bytes(), "t", Some(0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn attempts_and_timestamps_are_derived() {
        let csv = format!(
            "{HEAD}1,s,p,WA,,,2021-01-01T00:00:00Z,,\n2,s,p,TLE,,,2021-01-01T00:00:05Z,,\n3,s,p,AC,,,2021-01-01T00:00:09Z,,\n4,s,p,WA,,,2021-01-01T00:01:00Z,,\n"
        );
        let (events, _) = ingest_oj(csv.as_bytes(), "t", None).unwrap();
        let attempts: Vec<f64> = events.iter().map(|e| e.features[channel_index::ATTEMPTS]).collect();
        assert_eq!(attempts, vec![1.0, 2.0, 3.0, 1.0]);
        assert_eq!(events[0].timestamp, 1_609_459_200_000);
        assert!(!events[0].present[channel_index::EXEC_TIME_MS]);
    }
}
