//! EdNet-KT1-style logs: an interaction table plus item metadata.
//!
//! Interactions need `timestamp`, `user_id`, `item_id` (or `question_id`)
//! and `user_answer`; `elapsed_time` is optional. Metadata needs `item_id`
//! (or `question_id`), `correct_answer` and `tags` (`;`-joined, `-1` or
//! empty for untagged). Other columns are ignored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};

use tutorflow_core::event::{channel_index, fill_gaps, Channel, SignalEvent, FEATURE_DIM};

use crate::canonical::{sort_events, split_skills};
use crate::error::{AppError, AppResult};
use crate::report::{ErrorSink, IngestReport, Kt1Steps};

/// Only students with at least this many interactions are kept.
pub const MIN_INTERACTIONS: usize = 10;

/// Orders digit runs numerically and everything else bytewise, so `q2`
/// sorts before `q10` and `3` before `12`.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for (x, y) in ca.iter().zip(&cb) {
        let ord = match (x, y) {
            ((true, u), (true, v)) => {
                let (u, v) = (u.trim_start_matches('0'), v.trim_start_matches('0'));
                u.len().cmp(&v.len()).then_with(|| u.cmp(v))
            }
            ((true, _), (false, _)) => Ordering::Less,
            ((false, _), (true, _)) => Ordering::Greater,
            ((false, u), (false, v)) => u.cmp(v),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    pub items: Vec<String>,
    pub skills: Vec<String>,
    /// `matrix[item][skill]` in `{0, 1}`.
    pub matrix: Vec<Vec<u8>>,
}

impl QMatrix {
    /// Builds the matrix from item tags. Items without tags are skipped.
    pub fn from_tags(tags: &BTreeMap<String, Vec<String>>) -> Self {
        let mut items: Vec<String> = tags.iter().filter(|(_, t)| !t.is_empty()).map(|(i, _)| i.clone()).collect();
        items.sort_by(|a, b| natural_cmp(a, b));
        let skill_set: BTreeSet<&String> = tags.values().flatten().collect();
        let mut skills: Vec<String> = skill_set.into_iter().cloned().collect();
        skills.sort_by(|a, b| natural_cmp(a, b));
        let column: BTreeMap<&str, usize> = skills.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
        let matrix = items
            .iter()
            .map(|item| {
                let mut row = vec![0u8; skills.len()];
                for s in &tags[item] {
                    row[column[s.as_str()]] = 1;
                }
                row
            })
            .collect();
        Self { items, skills, matrix }
    }

    pub fn row(&self, item: &str) -> Option<&[u8]> {
        self.items.iter().position(|i| i == item).map(|k| self.matrix[k].as_slice())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["item_id".to_string()];
        header.extend(self.skills.iter().cloned());
        w.write_record(&header)?;
        for (item, row) in self.items.iter().zip(&self.matrix) {
            let mut rec = vec![item.clone()];
            rec.extend(row.iter().map(u8::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Meta {
    correct_answer: String,
    tags: Vec<String>,
}

fn column(index: &BTreeMap<String, usize>, names: &[&str], source: &str) -> AppResult<usize> {
    names
        .iter()
        .find_map(|n| index.get(*n).copied())
        .ok_or_else(|| AppError::Validation(format!("{source}: missing column {}", names.join(" or "))))
}

fn header_index<R: Read>(rdr: &mut csv::Reader<R>, source: &str) -> AppResult<BTreeMap<String, usize>> {
    let headers = rdr.headers().map_err(|e| AppError::csv(source, e))?;
    Ok(headers.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect())
}

fn read_metadata<R: Read>(reader: R, source: &str) -> AppResult<BTreeMap<String, Meta>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let index = header_index(&mut rdr, source)?;
    let item = column(&index, &["item_id", "question_id"], source)?;
    let answer = column(&index, &["correct_answer"], source)?;
    let tags = column(&index, &["tags"], source)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::csv(source, e))?;
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let tags: Vec<String> = split_skills(get(tags)).into_iter().filter(|t| t != "-1").collect();
        out.insert(
            get(item).to_string(),
            Meta { correct_answer: get(answer).to_string(), tags },
        );
    }
    Ok(out)
}

/// Runs the preprocessing steps in order: drop exact duplicate rows, drop
/// rows without an answer, drop rows whose item has no defined skill tag
/// (or no metadata), build the q-matrix, then drop students left with
/// fewer than [`MIN_INTERACTIONS`] rows.
pub fn preprocess_kt1<R1: Read, R2: Read>(
    interactions: R1,
    interactions_source: &str,
    metadata: R2,
    metadata_source: &str,
    max_errors: Option<usize>,
) -> AppResult<(Vec<SignalEvent>, QMatrix, IngestReport)> {
    let meta = read_metadata(metadata, metadata_source)?;
    let source = interactions_source;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(interactions);
    let index = header_index(&mut rdr, source)?;
    let ts_col = column(&index, &["timestamp"], source)?;
    let user_col = column(&index, &["user_id"], source)?;
    let item_col = column(&index, &["item_id", "question_id"], source)?;
    let answer_col = column(&index, &["user_answer"], source)?;
    let elapsed_col = index.get("elapsed_time").copied();

    let mut sink = ErrorSink::new(source, max_errors);
    let mut steps = Kt1Steps::default();
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut rows_in = 0;
    let mut kept = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| AppError::csv(source, e))?;
        rows_in += 1;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).unwrap_or("").trim();
        let Ok(timestamp) = get(ts_col).parse::<u64>() else {
            sink.push(line, format!("malformed timestamp `{}`", get(ts_col)))?;
            continue;
        };
        let elapsed = match elapsed_col.map(get).filter(|s| !s.is_empty()) {
            None => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                _ => {
                    sink.push(line, format!("bad elapsed_time `{s}`"))?;
                    continue;
                }
            },
        };
        if get(user_col).is_empty() || get(item_col).is_empty() {
            sink.push(line, "user_id and item_id must be non-empty".into())?;
            continue;
        }
        if !seen.insert(rec.iter().map(|f| f.trim().to_string()).collect()) {
            steps.duplicates += 1;
            continue;
        }
        kept.push((timestamp, get(user_col).to_string(), get(item_col).to_string(), get(answer_col).to_string(), elapsed));
    }

    let mut tagged = Vec::with_capacity(kept.len());
    for row in kept {
        if row.3.is_empty() {
            steps.missing_answers += 1;
        } else {
            tagged.push(row);
        }
    }
    let mut rows = Vec::with_capacity(tagged.len());
    let mut item_tags: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in tagged {
        match meta.get(&row.2) {
            Some(m) if !m.tags.is_empty() => {
                item_tags.entry(row.2.clone()).or_insert_with(|| m.tags.clone());
                rows.push(row);
            }
            _ => steps.undefined_tags += 1,
        }
    }
    let qmatrix = QMatrix::from_tags(&item_tags);

    let mut per_student: BTreeMap<&str, usize> = BTreeMap::new();
    for row in &rows {
        *per_student.entry(row.1.as_str()).or_default() += 1;
    }
    let keep: BTreeSet<String> = per_student
        .into_iter()
        .filter(|&(_, c)| c >= MIN_INTERACTIONS)
        .map(|(s, _)| s.to_string())
        .collect();

    let mut events = Vec::with_capacity(rows.len());
    for (timestamp, user, item, answer, elapsed) in rows {
        if !keep.contains(&user) {
            steps.sparse_students += 1;
            continue;
        }
        let m = &meta[&item];
        let mut features = vec![0.0; FEATURE_DIM];
        let mut present = vec![false; FEATURE_DIM];
        if let Some(v) = elapsed {
            features[channel_index::EXEC_TIME_MS] = v;
            present[channel_index::EXEC_TIME_MS] = true;
        }
        events.push(SignalEvent {
            student_id: user,
            timestamp,
            skill_ids: m.tags.clone(),
            correct: answer.eq_ignore_ascii_case(&m.correct_answer),
            item_id: item,
            features,
            present,
            channel: Channel::Submission,
        });
    }
    sort_events(&mut events);
    fill_gaps(&mut events);
    let report = IngestReport {
        source: "kt1".into(),
        rows_in,
        rows_out: events.len(),
        rows_rejected: sink.errors.len(),
        steps: Some(steps),
        errors: sink.errors,
    };
    Ok((events, qmatrix, report))
}
