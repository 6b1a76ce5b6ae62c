//! Output and input file formats shared by the commands.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tutorflow_core::allocation::{AllocationPlan, RESOURCE_NAMES};
use tutorflow_core::bkt::{BktParams, MasteryTrajectory};
use tutorflow_core::metrics::MetricReport;
use tutorflow_core::synthetic::HiddenState;

use crate::error::{AppError, AppResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> AppResult<T> {
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::json(path, e))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_text(path: &Path, text: &str) -> AppResult<()> {
    fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> AppResult<()> {
    write_text(path, &to_json_pretty(value))
}

/// Writes CSV produced by `fill` into `path`.
pub fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> AppResult<()> {
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| AppError::csv(path, e))?;
    fs::write(path, buf).map_err(|e| AppError::io(path, e))
}

/// Parameters document keyed by skill id.
pub type ParamsFile = BTreeMap<String, BktParams>;

pub fn read_params(path: &Path) -> AppResult<ParamsFile> {
    let params: ParamsFile = read_json(path)?;
    for (skill, p) in &params {
        p.validate()
            .map_err(|e| AppError::Validation(format!("{}: skill `{skill}`: {e}", path.display())))?;
    }
    Ok(params)
}

pub fn write_trajectories<W: Write>(writer: W, students: &[(String, MasteryTrajectory)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "student_id",
        "event_index",
        "timestamp_ms",
        "item_id",
        "skill_id",
        "prior",
        "posterior",
        "next",
        "predicted_correct",
        "observed",
    ])?;
    for (student, traj) in students {
        for r in &traj.records {
            w.write_record([
                student.clone(),
                r.event_index.to_string(),
                r.timestamp.to_string(),
                r.item_id.clone(),
                r.skill_id.clone(),
                r.prior.to_string(),
                r.posterior.to_string(),
                r.next.to_string(),
                r.predicted_correct.to_string(),
                (r.observed as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_hidden<W: Write>(writer: W, hidden: &[HiddenState]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["student_id", "skill_id", "step", "mastered"])?;
    for h in hidden {
        w.write_record([
            h.student_id.clone(),
            h.skill_id.clone(),
            h.step.to_string(),
            (h.mastered as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn resource_name(j: usize) -> String {
    RESOURCE_NAMES.get(j).map_or_else(|| format!("r{j}"), |s| s.to_string())
}

/// One row per (session, resource), sessions numbered from 1.
pub fn write_plan<W: Write>(writer: W, plan: &AllocationPlan) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["session", "resource", "amount", "sentiment"])?;
    let sessions = plan.sentiment.len();
    for i in 0..sessions {
        for (j, row) in plan.allocation.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                resource_name(j),
                row[i].to_string(),
                plan.sentiment[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Markdown table in the layout of the usual KT comparison table.
pub fn render_table(model: &str, r: &MetricReport) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
    let (auc, pr) = (fmt(r.auc_roc), fmt(r.pr_auc));
    format!(
        "| Model | Accuracy ↑ | AUC-ROC ↑ | PR-AUC ↑ | RMSE ↓ | NLL ↓ |\n\
         |---|---|---|---|---|---|\n\
         | {model} | {:.1}% | {auc} | {pr} | {:.3} | {:.3} |\n",
        r.accuracy * 100.0,
        r.rmse,
        r.nll
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let r = MetricReport {
            accuracy: 0.725,
            auc_roc: Some(0.69),
            pr_auc: Some(0.682),
            rmse: 0.256,
            nll: 0.671,
            n: 10,
            positives: 5,
        };
        let t = render_table("BKT", &r);
        assert!(t.ends_with("| BKT | 72.5% | 0.690 | 0.682 | 0.256 | 0.671 |\n"), "{t}");
    }
}
