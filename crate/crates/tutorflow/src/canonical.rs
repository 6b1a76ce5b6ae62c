//! Canonical interaction CSV.
//!
//! Columns, in order: `student_id, timestamp_ms, item_id, skill_ids,
//! correct, attempts, exec_time_ms, memory_kb, difficulty`. Skill ids are
//! joined with `;`. Empty numeric fields mean "not observed": the feature
//! holds 0 and its presence flag is false. The gap feature is derived on
//! load, never stored.

use std::io::{Read, Write};

use tutorflow_core::event::{channel_index, fill_gaps, Channel, SignalEvent, FEATURE_DIM};

use crate::error::{AppError, AppResult};

pub const HEADER: [&str; 9] = [
    "student_id",
    "timestamp_ms",
    "item_id",
    "skill_ids",
    "correct",
    "attempts",
    "exec_time_ms",
    "memory_kb",
    "difficulty",
];

/// Stored feature channels and their CSV column positions.
const STORED: [(usize, usize); 4] = [
    (channel_index::ATTEMPTS, 5),
    (channel_index::EXEC_TIME_MS, 6),
    (channel_index::MEMORY_KB, 7),
    (channel_index::DIFFICULTY, 8),
];

pub(crate) fn parse_bool(field: &str) -> Option<bool> {
    match field {
        "1" | "true" | "TRUE" | "True" => Some(true),
        "0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

pub(crate) fn split_skills(field: &str) -> Vec<String> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

fn parse_row(rec: &csv::StringRecord) -> Result<SignalEvent, String> {
    if rec.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), rec.len()));
    }
    let timestamp: u64 = rec[1]
        .parse()
        .map_err(|_| format!("bad timestamp_ms `{}`", &rec[1]))?;
    let correct = parse_bool(&rec[4]).ok_or_else(|| format!("bad correct flag `{}`", &rec[4]))?;
    let mut features = vec![0.0; FEATURE_DIM];
    let mut present = vec![false; FEATURE_DIM];
    for (channel, col) in STORED {
        let raw = &rec[col];
        if raw.is_empty() {
            continue;
        }
        let v: f64 = raw.parse().map_err(|_| format!("bad {} `{raw}`", HEADER[col]))?;
        if !v.is_finite() {
            return Err(format!("non-finite {} `{raw}`", HEADER[col]));
        }
        features[channel] = v;
        present[channel] = true;
    }
    let ev = SignalEvent {
        student_id: rec[0].to_string(),
        timestamp,
        item_id: rec[2].to_string(),
        skill_ids: split_skills(&rec[3]),
        correct,
        features,
        present,
        channel: Channel::Submission,
    };
    ev.validate().map_err(|e| e.to_string())?;
    Ok(ev)
}

/// Reads a canonical CSV. The first bad row aborts with its line number.
pub fn read_events<R: Read>(reader: R, source: &str) -> AppResult<Vec<SignalEvent>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| AppError::csv(source, e))?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        return Err(AppError::Validation(format!(
            "{source}: header must be `{}`",
            HEADER.join(",")
        )));
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::csv(source, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let ev = parse_row(&rec).map_err(|m| AppError::Validation(format!("{source}:{line}: {m}")))?;
        events.push(ev);
    }
    fill_gaps(&mut events);
    Ok(events)
}

pub fn read_events_file(path: &std::path::Path) -> AppResult<Vec<SignalEvent>> {
    let file = std::fs::File::open(path).map_err(|e| AppError::io(path, e))?;
    read_events(std::io::BufReader::new(file), &path.display().to_string())
}

fn number(ev: &SignalEvent, channel: usize) -> String {
    if ev.present.get(channel).copied().unwrap_or(false) {
        format!("{}", ev.features[channel])
    } else {
        String::new()
    }
}

pub fn write_events<W: Write>(writer: W, events: &[SignalEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for ev in events {
        let mut row = vec![
            ev.student_id.clone(),
            ev.timestamp.to_string(),
            ev.item_id.clone(),
            ev.skill_ids.join(";"),
            if ev.correct { "1" } else { "0" }.to_string(),
        ];
        row.extend(STORED.iter().map(|&(channel, _)| number(ev, channel)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Stable sort by student, then timestamp, keeping file order on ties.
pub fn sort_events(events: &mut [SignalEvent]) {
    events.sort_by(|a, b| a.student_id.cmp(&b.student_id).then(a.timestamp.cmp(&b.timestamp)));
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "student_id,timestamp_ms,item_id,skill_ids,correct,attempts,exec_time_ms,memory_kb,difficulty
s1,1000,p1,a;b,1,2,0.125,1024,3
s1,4000,p2,a,0,,,,
\"s,2\",2000,p1,b,1,1,17,,1.5
";

    #[test]
    fn round_trip_is_byte_exact() {
        let events = read_events(SAMPLE.as_bytes(), "sample").unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].skill_ids, vec!["a", "b"]);
        assert!(!events[1].present[channel_index::ATTEMPTS]);
        assert_eq!(events[1].features[channel_index::GAP_SECONDS], 3.0);
        assert_eq!(events[2].student_id, "s,2");
        let mut out = Vec::new();
        write_events(&mut out, &events).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), SAMPLE);
    }

    #[test]
    fn bad_rows_name_their_line() {
        let bad = "student_id,timestamp_ms,item_id,skill_ids,correct,attempts,exec_time_ms,memory_kb,difficulty\ns1,1,p,a,maybe,,,,\n";
        let err = read_events(bad.as_bytes(), "bad.csv").unwrap_err();
        assert!(err.to_string().contains("bad.csv:2"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_events("a,b\n".as_bytes(), "x").is_err());
    }
}
